"""Dataset location helpers and a synthetic citation-style graph generator."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .graph import Graph, canonical_adjacency, load_cora_content

__all__ = ["CORA_ENV", "find_cora", "load_cora", "synthetic_citation_graph"]

CORA_ENV = "HYPGAD_CORA_DIR"


def _cora_candidates(path=None):
    if path is not None:
        yield Path(path)
    env = os.environ.get(CORA_ENV)
    if env:
        yield Path(env)
    yield Path.cwd() / "data" / "cora"
    yield Path(__file__).resolve().parents[2] / "data" / "cora"
    yield Path.home() / ".hypgad" / "cora"


def find_cora(path=None):
    """Directory holding ``cora.content`` and ``cora.cites``, or ``None``.

    Looks at ``path``, then ``$HYPGAD_CORA_DIR``, ``./data/cora``, the
    repository's ``data/cora`` and ``~/.hypgad/cora``.
    """
    for cand in _cora_candidates(path):
        if (cand / "cora.content").is_file() and (cand / "cora.cites").is_file():
            return cand
    return None


def load_cora(path=None) -> Graph:
    root = find_cora(path)
    if root is None:
        raise FileNotFoundError(
            f"cora.content/cora.cites not found; set ${CORA_ENV} or place them in ./data/cora")
    return load_cora_content(root / "cora.content", root / "cora.cites")


def synthetic_citation_graph(n_nodes=2708, n_classes=7, n_features=1433, n_edges=5278,
                             words_per_node=18, homophily=0.8, topic_words=150,
                             topic_share=0.5, degree_exponent=2.5, seed=0) -> Graph:
    """Citation-like attributed graph with binary bag-of-words features.

    Node popularity follows a Pareto law so degrees are heavy tailed. Each
    edge joins a popularity-weighted source to a same-class target with
    probability ``homophily`` and to an arbitrary target otherwise. A node's
    words are drawn partly from its class topic and partly from a Zipf
    background vocabulary.

    Parameters
    ----------
    n_edges : int
        Number of sampled citation pairs before deduplication.
    seed : int or numpy.random.Generator

    Returns
    -------
    Graph
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, n_nodes)
    pop = rng.pareto(degree_exponent - 1.0, n_nodes) + 1.0

    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    cls_prob = [pop[m] / pop[m].sum() for m in members]
    all_prob = pop / pop.sum()

    src = rng.choice(n_nodes, n_edges, p=all_prob)
    same = rng.random(n_edges) < homophily
    dst = rng.choice(n_nodes, n_edges, p=all_prob)
    for c in range(n_classes):
        sel = np.flatnonzero(same & (labels[src] == c))
        if sel.size and members[c].size:
            dst[sel] = rng.choice(members[c], sel.size, p=cls_prob[c])
    adjacency = canonical_adjacency(src, dst, n_nodes)

    background = 1.0 / np.arange(1, n_features + 1)
    background /= background.sum()
    topics = [rng.choice(n_features, min(topic_words, n_features), replace=False) for _ in range(n_classes)]
    X = np.zeros((n_nodes, n_features))
    counts = np.maximum(1, rng.poisson(words_per_node, n_nodes))
    for i in range(n_nodes):
        k_topic = rng.binomial(counts[i], topic_share)
        words = np.concatenate([rng.choice(topics[labels[i]], k_topic),
                                rng.choice(n_features, counts[i] - k_topic, p=background)])
        X[i, words] = 1.0
    return Graph(X, adjacency, labels)

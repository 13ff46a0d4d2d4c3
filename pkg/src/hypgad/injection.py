"""Synthetic outlier injection.

Four procedures are provided: contextual (attribute copy from the farthest
node in attribute space), structural (dense groups), path (attribute copy
from the farthest node in hop distance) and DICE-n (degree-preserving
rewiring of a node's edges towards other classes). Each call draws from a
single ``numpy.random.Generator`` in a fixed order: candidates, then
per-candidate references, then group partitions, then edge coin flips.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, canonical_adjacency, shortest_path_distances, write_tsv

__all__ = [
    "InjectionError",
    "InjectionResult",
    "InjectionSpec",
    "inject_contextual",
    "inject_structural",
    "inject_path",
    "inject_dice_n",
    "inject_mixture",
    "inject",
    "default_spec",
    "save_injection",
]

KINDS = ("contextual", "structural", "path", "dice_n")


class InjectionError(ValueError):
    """Invalid injection parameters for the given graph."""


@dataclass
class InjectionResult:
    graph: Graph
    outlier_ids: np.ndarray
    log: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outlier_ids = np.sort(np.asarray(self.outlier_ids, dtype=np.int64))


@dataclass
class InjectionSpec:
    """Parameters of one injection run.

    ``kinds`` maps an outlier kind to its count. ``q`` defaults to ``s``,
    matching the usual benchmark configuration.
    """

    kinds: dict
    s: int = 10
    q: int | None = None
    p: float = 0.2
    r: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        for k in self.kinds:
            if k not in KINDS:
                raise InjectionError(f"unknown outlier kind {k!r}; expected one of {KINDS}")
        if self.q is None:
            self.q = self.s
        if not 0.0 <= self.p <= 1.0:
            raise InjectionError("p must lie in [0, 1]")
        if not 0.0 < self.r <= 1.0:
            raise InjectionError("r must lie in (0, 1]")
        if self.q < 1:
            raise InjectionError("q must be at least 1")

    @property
    def total(self) -> int:
        return int(sum(self.kinds.values()))


# benchmark settings for Cora-sized graphs: o ~ 5% of nodes, s ~ twice the mean degree
SETTINGS = {
    "cntxt+strct": ("contextual", "structural"),
    "cntxt": ("contextual",),
    "strct": ("structural",),
    "path+dice": ("path", "dice_n"),
    "path": ("path",),
    "dice": ("dice_n",),
}


def default_spec(setting: str, o: int = 140, s: int = 10, p: float = 0.2, r: float = 0.5,
                 q: int | None = None, seed=None) -> InjectionSpec:
    """Spec for one of the named settings, splitting ``o`` evenly across kinds."""
    try:
        kinds = SETTINGS[setting]
    except KeyError:
        raise InjectionError(f"unknown setting {setting!r}; expected one of {list(SETTINGS)}") from None
    if len(kinds) == 1:
        counts = {kinds[0]: o}
    else:
        half = o // 2
        counts = {kinds[0]: half, kinds[1]: o - half}
    return InjectionSpec(counts, s=s, q=q, p=p, r=r, seed=seed)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _farthest(dist_row: np.ndarray, refs: np.ndarray) -> int:
    # argmax with ties broken towards the smallest node index; inf beats any finite value
    d = dist_row
    best = d.max()
    return int(refs[d == best].min())


def _contextual(g, candidates, exclude, q, rng, log):
    n = g.num_nodes
    X = g.features
    l1 = np.abs(X).sum(axis=1, keepdims=True)
    Xn = np.divide(X, l1, out=np.zeros_like(X), where=l1 > 0)
    pool = np.setdiff1d(np.arange(n), exclude)
    if pool.size < q:
        raise InjectionError(f"need at least q={q} reference nodes outside the candidates, have {pool.size}")
    newX = X.copy()
    for i in candidates:
        refs = rng.choice(pool, size=q, replace=False)
        d = np.linalg.norm(Xn[refs] - Xn[i], axis=1)
        j = _farthest(d, refs)
        newX[i] = X[j]
        log[int(i)] = {"kind": "contextual", "source": j}
    return newX


def _path(g, candidates, exclude, eligible, q, rng, log):
    X = g.features
    pool = np.setdiff1d(eligible, exclude)
    if pool.size < q:
        raise InjectionError(f"need at least q={q} non-isolated reference nodes, have {pool.size}")
    newX = X.copy()
    for i in candidates:
        refs = rng.choice(pool, size=q, replace=False)
        d = shortest_path_distances(g, int(i))[refs]
        j = _farthest(d, refs)
        newX[i] = X[j]
        dj = d[refs == j][0]
        log[int(i)] = {"kind": "path", "source": j, "hops": None if math.isinf(dj) else int(dj)}
    return newX


def _structural(A_lil, candidates, s, p, rng, log):
    order = rng.permutation(candidates)
    groups = order.reshape(-1, s)
    for gid, grp in enumerate(groups):
        grp = np.sort(grp)
        iu, ju = np.triu_indices(s, k=1)
        keep = rng.random(iu.size) >= p
        added, removed = [], []
        for a, b, k in zip(grp[iu], grp[ju], keep):
            a, b = int(a), int(b)
            present = A_lil[a, b] != 0
            if k and not present:
                A_lil[a, b] = A_lil[b, a] = 1
                added.append([a, b])
            elif not k and present:
                A_lil[a, b] = A_lil[b, a] = 0
                removed.append([a, b])
        for v in grp:
            log[int(v)] = {"kind": "structural", "group": gid, "members": grp.tolist()}
        log.setdefault("_groups", []).append({"members": grp.tolist(), "added": added, "removed": removed})


def _dice(nbrs, classes, candidates, protected, r, rng, log, n):
    for i in candidates:
        i = int(i)
        cur = np.fromiter(sorted(nbrs[i]), dtype=np.int64, count=len(nbrs[i]))
        same = cur[classes[cur] == classes[i]] if cur.size else cur
        k = math.ceil(same.size * r)
        entry = {"kind": "dice_n", "k": k, "removed": [], "added": [], "shortfall": 0}
        log[i] = entry
        if k == 0:
            continue
        # disconnect targets drawn from all neighbours regardless of class; other
        # outliers are left alone so their degrees stay fixed too
        drop_pool = cur[~protected[cur]]
        k_drop = min(k, drop_pool.size)
        mask = np.ones(n, dtype=bool)
        mask[i] = False
        mask[cur] = False
        mask &= classes != classes[i]
        mask &= ~protected
        add_pool = np.flatnonzero(mask)
        k_eff = min(k_drop, add_pool.size)
        if k_eff < k:
            entry["shortfall"] = k - k_eff
        drop = rng.choice(drop_pool, size=k_eff, replace=False) if k_eff else drop_pool[:0]
        add = rng.choice(add_pool, size=k_eff, replace=False) if k_eff else add_pool[:0]
        for j in drop:
            j = int(j)
            nbrs[i].discard(j)
            nbrs[j].discard(i)
            entry["removed"].append(j)
        for j in add:
            j = int(j)
            nbrs[i].add(j)
            nbrs[j].add(i)
            entry["added"].append(j)
        entry["removed"].sort()
        entry["added"].sort()


def _sets_to_csr(nbrs, n):
    src = [i for i, s in enumerate(nbrs) for _ in s]
    dst = [j for s in nbrs for j in s]
    return canonical_adjacency(src, dst, n)


def inject_mixture(g: Graph, spec: InjectionSpec) -> InjectionResult:
    """Inject every kind in ``spec.kinds`` with jointly disjoint candidate sets.

    All candidates are drawn in a single call without replacement and split
    across kinds in the order given. When path outliers are requested the
    candidate pool excludes isolated nodes.
    """
    rng = _rng(spec.seed)
    n = g.num_nodes
    counts = {k: int(v) for k, v in spec.kinds.items()}
    if any(v < 0 for v in counts.values()):
        raise InjectionError("outlier counts must be non-negative")
    total = sum(counts.values())
    if total > n:
        raise InjectionError(f"cannot inject {total} outliers into {n} nodes")
    if counts.get("structural", 0) and (spec.s < 2 or counts["structural"] % spec.s):
        raise InjectionError(f"structural count {counts['structural']} must be a multiple of s={spec.s} >= 2")

    deg = g.degrees
    eligible = np.flatnonzero(deg > 0)
    pool = eligible if counts.get("path", 0) else np.arange(n)
    if total > pool.size:
        raise InjectionError(f"only {pool.size} eligible candidate nodes for {total} outliers")
    if counts.get("contextual", 0) and total + spec.q > n:
        raise InjectionError(f"o + q = {total + spec.q} exceeds the {n} available nodes")
    if counts.get("path", 0) and total + spec.q > eligible.size:
        raise InjectionError(f"o + q = {total + spec.q} exceeds the {eligible.size} non-isolated nodes")

    chosen = rng.choice(pool, size=total, replace=False) if total else np.empty(0, dtype=np.int64)
    per_kind, start = {}, 0
    for kind, c in counts.items():
        per_kind[kind] = chosen[start:start + c]
        start += c

    log: dict = {}
    X = g.features
    if per_kind.get("contextual") is not None and per_kind["contextual"].size:
        X = _contextual(g, per_kind["contextual"], chosen, spec.q, rng, log)
    if per_kind.get("path") is not None and per_kind["path"].size:
        newX = _path(g, per_kind["path"], chosen, eligible, spec.q, rng, log)
        rows = per_kind["path"]
        X = X.copy() if X is g.features else X
        X[rows] = newX[rows]

    A = g.adjacency
    if per_kind.get("structural") is not None and per_kind["structural"].size:
        A_lil = A.tolil(copy=True)
        _structural(A_lil, per_kind["structural"], spec.s, spec.p, rng, log)
        A = sp.csr_matrix(A_lil)
    if per_kind.get("dice_n") is not None and per_kind["dice_n"].size:
        nbrs = [set(A.indices[A.indptr[i]:A.indptr[i + 1]].tolist()) for i in range(n)]
        protected = np.zeros(n, dtype=bool)
        protected[chosen] = True
        _dice(nbrs, g.class_labels, per_kind["dice_n"], protected, spec.r, rng, log, n)
        A = _sets_to_csr(nbrs, n)

    labels = np.zeros(n, dtype=np.int8)
    labels[chosen] = 1
    out = Graph(X, A, g.class_labels, labels)
    return InjectionResult(out, chosen, log)


def inject_contextual(g: Graph, o: int, q: int, seed=None) -> InjectionResult:
    """Replace the attributes of ``o`` random nodes with those of the farthest
    (in l1-normalized attribute space) of ``q`` random non-candidate nodes.
    The original, un-normalized row is copied."""
    if o + q > g.num_nodes:
        raise InjectionError(f"o + q = {o + q} exceeds {g.num_nodes} nodes")
    return inject_mixture(g, InjectionSpec({"contextual": o}, q=q, seed=seed))


def inject_structural(g: Graph, o: int, s: int, p: float = 0.2, seed=None) -> InjectionResult:
    """Partition ``o`` random nodes into groups of ``s``, connect each group
    fully, then drop each in-group pair with probability ``p``."""
    if s < 2 or o % s:
        raise InjectionError(f"o={o} must be a multiple of s={s} >= 2")
    return inject_mixture(g, InjectionSpec({"structural": o}, s=s, p=p, seed=seed))


def inject_path(g: Graph, o: int, q: int, seed=None) -> InjectionResult:
    """Replace the attributes of ``o`` nodes with those of the reference node
    farthest in hop distance. Isolated nodes never take part; unreachable
    references count as infinitely far."""
    return inject_mixture(g, InjectionSpec({"path": o}, q=q, seed=seed))


def inject_dice_n(g: Graph, o: int, r: float = 0.5, seed=None) -> InjectionResult:
    """Per candidate, remove ``ceil(r * #same-class neighbours)`` of its edges
    and add as many to non-adjacent nodes of other classes."""
    return inject_mixture(g, InjectionSpec({"dice_n": o}, r=r, seed=seed))


def inject(g: Graph, spec: InjectionSpec) -> InjectionResult:
    return inject_mixture(g, spec)


def save_injection(result: InjectionResult, directory, prefix: str = "injected") -> dict:
    """Write the perturbed graph as TSV files plus a JSON change log."""
    paths = write_tsv(result.graph, directory, prefix)
    log = {str(k): v for k, v in result.log.items()}
    payload = {"outlier_ids": result.outlier_ids.tolist(), "changes": log}
    paths["log"] = os.path.join(directory, f"{prefix}.log.json")
    with open(paths["log"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=int)
    return paths

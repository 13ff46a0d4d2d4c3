"""Attributed graph container, dataset readers/writers and feature normalization."""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

logger = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "GraphFormatError",
    "NormalizationMode",
    "load_cora_content",
    "load_tsv",
    "write_tsv",
    "normalize_features",
    "shortest_path_distances",
    "canonical_adjacency",
]


class GraphFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class NormalizationMode(str, enum.Enum):
    NONE = "none"
    L1_ROW = "l1_row"
    L2_ROW = "l2_row"


def canonical_adjacency(rows, cols, num_nodes: int) -> sp.csr_matrix:
    """Build a symmetric, duplicate-free, loop-free 0/1 CSR matrix from pairs."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    adj = sp.coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)), shape=(num_nodes, num_nodes)).tocsr()
    adj.sum_duplicates()
    adj.data[:] = 1
    adj.sort_indices()
    return adj


@dataclass(frozen=True, eq=False)
class Graph:
    """Node-attributed undirected graph.

    Parameters
    ----------
    features : ndarray of shape (n_nodes, n_features)
        Node attribute matrix, stored as float64.
    adjacency : scipy.sparse matrix of shape (n_nodes, n_nodes)
        Any sparse structure; it is symmetrized, deduplicated and stripped
        of self-loops on construction.
    class_labels : ndarray of shape (n_nodes,), optional
        Integer class per node. Defaults to all zeros.
    outlier_labels : ndarray of shape (n_nodes,), optional
        Ground-truth 0/1 outlier flags. Defaults to all zeros.
    """

    features: np.ndarray
    adjacency: sp.csr_matrix
    class_labels: np.ndarray = None
    outlier_labels: np.ndarray = None
    node_ids: tuple = field(default=None, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        n = X.shape[0]
        A = sp.csr_matrix(self.adjacency)
        if A.shape != (n, n):
            raise ValueError(f"adjacency shape {A.shape} does not match {n} nodes")
        coo = A.tocoo()
        nz = coo.data != 0
        A = canonical_adjacency(coo.row[nz], coo.col[nz], n)
        y = np.zeros(n, dtype=np.int64) if self.class_labels is None else np.asarray(self.class_labels, dtype=np.int64)
        o = np.zeros(n, dtype=np.int8) if self.outlier_labels is None else np.asarray(self.outlier_labels, dtype=np.int8)
        if y.shape != (n,) or o.shape != (n,):
            raise ValueError("label arrays must have one entry per node")
        if not np.isin(o, (0, 1)).all():
            raise ValueError("outlier_labels must be 0/1")
        X.setflags(write=False)
        y.setflags(write=False)
        o.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "class_labels", y)
        object.__setattr__(self, "outlier_labels", o)

    @classmethod
    def from_edges(cls, features, edges, class_labels=None, outlier_labels=None):
        features = np.asarray(features, dtype=np.float64)
        n = features.shape[0]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        A = canonical_adjacency(edges[:, 0], edges[:, 1], n)
        return cls(features, A, class_labels, outlier_labels)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[i]:A.indptr[i + 1]]

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an (n_edges, 2) array with ``i < j``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def has_edge(self, i: int, j: int) -> bool:
        nbrs = self.neighbors(i)
        k = np.searchsorted(nbrs, j)
        return bool(k < nbrs.size and nbrs[k] == j)

    def with_features(self, features) -> "Graph":
        return replace(self, features=features)

    def with_adjacency(self, adjacency) -> "Graph":
        return replace(self, adjacency=adjacency)

    def with_outliers(self, outlier_labels) -> "Graph":
        return replace(self, outlier_labels=outlier_labels)

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph on ``nodes`` (in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        A = self.adjacency[nodes][:, nodes]
        return Graph(self.features[nodes], A, self.class_labels[nodes], self.outlier_labels[nodes])

    def __repr__(self):
        return (f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
                f"feature_dim={self.feature_dim}, outliers={int(self.outlier_labels.sum())})")


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield lineno, line


def load_cora_content(content_path, cites_path) -> Graph:
    """Read the plain-text Cora distribution (``cora.content`` / ``cora.cites``).

    Node ids are remapped to ``0..n-1`` in order of first appearance in the
    content file and class names to integer codes in the same way. Citations
    are treated as undirected; pairs naming unknown ids are dropped and
    counted in a warning.
    """
    ids: dict[str, int] = {}
    classes: dict[str, int] = {}
    rows, labels = [], []
    width = None
    for lineno, line in _read_lines(content_path):
        parts = line.split()
        if len(parts) < 3:
            raise GraphFormatError(f"{content_path}:{lineno}: expected id, features and class")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise GraphFormatError(f"{content_path}:{lineno}: expected {width} fields, got {len(parts)}")
        node_id, feats, cls = parts[0], parts[1:-1], parts[-1]
        if node_id in ids:
            raise GraphFormatError(f"{content_path}:{lineno}: duplicate node id {node_id!r}")
        try:
            rows.append([float(v) for v in feats])
        except ValueError as exc:
            raise GraphFormatError(f"{content_path}:{lineno}: non-numeric feature ({exc})") from None
        ids[node_id] = len(ids)
        labels.append(classes.setdefault(cls, len(classes)))
    if not ids:
        raise GraphFormatError(f"{content_path}: no nodes found")

    src, dst = [], []
    dropped = 0
    for lineno, line in _read_lines(cites_path):
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{cites_path}:{lineno}: expected 2 fields, got {len(parts)}")
        a, b = ids.get(parts[0]), ids.get(parts[1])
        if a is None or b is None:
            dropped += 1
            continue
        src.append(a)
        dst.append(b)
    if dropped:
        logger.warning("dropped %d citation pairs referencing unknown node ids", dropped)

    n = len(ids)
    A = canonical_adjacency(src, dst, n)
    g = Graph(np.asarray(rows, dtype=np.float64), A, np.asarray(labels))
    object.__setattr__(g, "node_ids", tuple(ids))
    return g


def load_tsv(features_path, edges_path, labels_path=None, outliers_path=None) -> Graph:
    """Read a whitespace-separated feature/edge/label triplet.

    ``features_path`` holds one real row per node, ``edges_path`` one
    0-indexed ``i j`` pair per line, and the optional label files one integer
    per node.
    """
    rows = []
    width = None
    for lineno, line in _read_lines(features_path):
        try:
            row = [float(v) for v in line.split()]
        except ValueError as exc:
            raise GraphFormatError(f"{features_path}:{lineno}: {exc}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphFormatError(f"{features_path}:{lineno}: row length {len(row)} != {width}")
        rows.append(row)
    if not rows:
        raise GraphFormatError(f"{features_path}: no feature rows")
    n = len(rows)

    src, dst = [], []
    for lineno, line in _read_lines(edges_path):
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{edges_path}:{lineno}: expected 'i j'")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"{edges_path}:{lineno}: non-integer node index") from None
        if not (0 <= a < n and 0 <= b < n):
            raise GraphFormatError(f"{edges_path}:{lineno}: node index out of range [0, {n})")
        src.append(a)
        dst.append(b)

    def read_ints(path):
        vals = []
        for lineno, line in _read_lines(path):
            try:
                vals.append(int(line))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: expected an integer") from None
        if len(vals) != n:
            raise GraphFormatError(f"{path}: expected {n} labels, got {len(vals)}")
        return np.asarray(vals)

    y = read_ints(labels_path) if labels_path else None
    o = read_ints(outliers_path) if outliers_path else None
    return Graph(np.asarray(rows), canonical_adjacency(src, dst, n), y, o)


def write_tsv(g: Graph, directory, prefix: str = "graph") -> dict:
    """Write ``g`` as a TSV triplet plus an outlier-label file.

    Features are written with 17 significant digits so that reading them
    back reproduces the doubles exactly. Returns the written paths.
    """
    os.makedirs(directory, exist_ok=True)
    paths = {
        "features": os.path.join(directory, f"{prefix}.features.tsv"),
        "edges": os.path.join(directory, f"{prefix}.edges.tsv"),
        "labels": os.path.join(directory, f"{prefix}.labels.tsv"),
        "outliers": os.path.join(directory, f"{prefix}.outliers.tsv"),
    }
    np.savetxt(paths["features"], g.features, fmt="%.17g", delimiter="\t")
    np.savetxt(paths["edges"], g.edge_array(), fmt="%d", delimiter="\t")
    np.savetxt(paths["labels"], g.class_labels, fmt="%d")
    np.savetxt(paths["outliers"], g.outlier_labels, fmt="%d")
    return paths


def normalize_features(g: Graph, mode=NormalizationMode.NONE) -> Graph:
    """Scale each feature row to unit l1 or l2 norm; zero rows are left as is."""
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.NONE:
        return g
    X = g.features
    ord_ = 1 if mode is NormalizationMode.L1_ROW else 2
    norms = np.linalg.norm(X, ord=ord_, axis=1, keepdims=True)
    scaled = np.divide(X, norms, out=X.copy(), where=norms > 0)
    return g.with_features(scaled)


def shortest_path_distances(g: Graph, source) -> np.ndarray:
    """Hop distances from ``source`` (scalar or array of sources); ``inf`` if unreachable."""
    return shortest_path(g.adjacency, method="D", directed=False, unweighted=True, indices=source)

"""Self-check suites run by ``hypgad verify``.

Each suite compares the implementation against an independent oracle
(closed forms, brute-force loops or finite differences) and returns a
:class:`SuiteResult`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import minimize

from .graph import Graph
from .manifold import Euclidean, Lorentz, PoincareBall
from .metrics import average_precision, roc_auc
from .network import GADNet, ModelConfig, lemma1_oracle
from .training import LossConfig, grad_check

__all__ = ["SuiteResult", "SUITES", "run_suites", "roc_auc_oracle", "average_precision_oracle",
           "lemma2_distances", "gradcheck_instance"]

GEOMETRIES = ("euclidean", "lorentz", "poincare")


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, ok: bool, message: str):
        self.checks += 1
        if not ok:
            self.failures.append(message)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checks - len(self.failures)}/{self.checks} checks passed"


def roc_auc_oracle(scores, labels) -> float:
    """Pair-counting ROC-AUC in O(P N)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (pos.size * neg.size)


def average_precision_oracle(scores, labels) -> float:
    """AP from an explicit loop over distinct thresholds, highest first."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    P = y.sum()
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(s.tolist()), reverse=True):
        sel = s >= thr
        tp = int((sel & y).sum())
        precision = tp / int(sel.sum())
        recall = tp / P
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def suite_metrics(cases=1000, seed=0, max_n=12) -> SuiteResult:
    res = SuiteResult("metrics")
    rng = np.random.default_rng(seed)
    done = 0
    while done < cases:
        n = int(rng.integers(2, max_n + 1))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        # coarse integer scores force ties in about half the cases
        scores = rng.integers(0, 5, n).astype(float) if done % 2 else rng.random(n)
        a, b = roc_auc(scores, labels), roc_auc_oracle(scores, labels)
        res.check(abs(a - b) < 1e-12, f"roc_auc {a} != oracle {b} for {scores}, {labels}")
        a, b = average_precision(scores, labels), average_precision_oracle(scores, labels)
        res.check(abs(a - b) < 1e-12, f"AP {a} != oracle {b} for {scores}, {labels}")
        done += 1
    return res


def lemma1_brute_force(n_normal, n_nodes, grid=20001):
    """Reconstruction errors of the idealized models, found numerically.

    Normal nodes carry ``e1`` and outliers ``e2``. The rank-one linear
    autoencoder projects onto the best unit direction ``u`` (found by a grid
    over angles); the oversmoothed GCNAE reconstructs every node with the
    single vector ``c`` minimizing the summed squared error.
    """
    X = np.zeros((n_nodes, 2))
    X[:n_normal, 0] = 1.0
    X[n_normal:, 1] = 1.0
    theta = np.linspace(0, np.pi, grid)
    U = np.stack([np.cos(theta), np.sin(theta)], 1)
    proj = X @ U.T
    losses = ((X ** 2).sum(1)[:, None] - proj ** 2).sum(0)
    u = U[np.argmin(losses)]
    rec = np.outer(X @ u, u)
    mlp = np.linalg.norm(X - rec, axis=1)

    def total(c):
        return ((X - c) ** 2).sum()

    c = minimize(total, np.array([0.3, 0.3]), method="Nelder-Mead",
                 options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 10000}).x
    gcn = np.linalg.norm(X - c, axis=1)
    return mlp[0], mlp[-1], gcn[0], gcn[-1]


def suite_lemma1() -> SuiteResult:
    res = SuiteResult("lemma1")
    for n_normal, n_nodes in [(9, 10), (6, 10), (10, 10), (51, 100), (3, 4)]:
        got = lemma1_oracle(n_normal, n_nodes)
        if n_normal == n_nodes:
            res.check(abs(got[2]) < 1e-15, f"({n_normal},{n_nodes}) GCNAE normal error should vanish")
            continue
        ref = lemma1_brute_force(n_normal, n_nodes)
        res.check(np.allclose(got, ref, atol=1e-6), f"({n_normal},{n_nodes}): {got} vs brute force {ref}")
    try:
        lemma1_oracle(5, 10)
        res.check(False, "domain violation (5, 10) not rejected")
    except ValueError:
        res.check(True, "")
    return res


def lemma2_distances(x, y):
    """Euclidean, Lorentz and Poincare distances of unit vectors after ``exp_o``."""
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    L, B = Lorentz(), PoincareBall()
    d_e = torch.linalg.vector_norm(x - y, dim=-1)
    d_l = L.dist(L.expmap0_spatial(x), L.expmap0_spatial(y))
    d_b = B.dist(B.expmap0(x), B.expmap0(y))
    return d_e.numpy(), d_l.numpy(), d_b.numpy()


def suite_lemma2(pairs=10000, seed=0) -> SuiteResult:
    res = SuiteResult("lemma2")
    rng = np.random.default_rng(seed)
    dims = rng.integers(2, 65, pairs)
    for dim in np.unique(dims):
        k = int((dims == dim).sum())
        x = rng.normal(size=(k, dim))
        y = rng.normal(size=(k, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        d_e, d_l, d_b = lemma2_distances(x, y)
        res.check(bool(np.all(d_l - d_e > 1e-9)), f"dim {dim}: Euclidean vs Lorentz margin too small")
        res.check(bool(np.all(d_b - d_l > 1e-9)), f"dim {dim}: Lorentz vs Poincare margin too small")
        cl = np.arccosh(1 + np.sinh(1.0) ** 2 * d_e ** 2 / 2)
        th2 = np.tanh(1.0) ** 2
        cb = np.arccosh(1 + 2 * th2 / (1 - th2) ** 2 * d_e ** 2)
        res.check(bool(np.allclose(d_l, cl, atol=1e-9, rtol=0)), f"dim {dim}: Lorentz closed form mismatch")
        res.check(bool(np.allclose(d_b, cb, atol=1e-9, rtol=0)), f"dim {dim}: Poincare closed form mismatch")
    x = np.zeros(3)
    x[0] = 1.0
    d_e, d_l, d_b = lemma2_distances(x, -x)
    res.check(abs(d_l - d_e) < 1e-9 and d_b > d_l, f"antipodal case: {d_e}, {d_l}, {d_b}")
    e1, e2 = np.eye(2)
    d_e, d_l, d_b = lemma2_distances(e1, e2)
    ref = (math.sqrt(2), math.acosh(math.cosh(1) ** 2), math.acosh(math.cosh(2) ** 2))
    res.check(np.allclose((d_e, d_l, d_b), ref, atol=1e-12), f"orthogonal pair {(d_e, d_l, d_b)} vs {ref}")
    return res


def suite_geometry(seed=0, n_points=50) -> SuiteResult:
    res = SuiteResult("geometry")
    rng = np.random.default_rng(seed)
    for m in (Euclidean(), Lorentz(), PoincareBall()):
        dim = 5
        v = torch.as_tensor(rng.normal(size=(n_points, dim)))
        v = v / torch.linalg.vector_norm(v, dim=-1, keepdim=True) * torch.as_tensor(rng.uniform(0.05, 3, (n_points, 1)))
        if isinstance(m, Lorentz):
            X = m.expmap0_spatial(v)
            base = m.expmap0_spatial(torch.as_tensor(rng.normal(size=(n_points, dim)) * 0.5))
            w = torch.as_tensor(rng.normal(size=(n_points, dim + 1)))
            w = w + m.inner(base, w, keepdim=True) * base  # project onto the tangent space
            back = m.logmap(base, m.expmap(base, w))
            ok = torch.allclose(back, w, rtol=1e-7, atol=1e-7)
        else:
            X = m.expmap0(v)
            base = m.expmap0(torch.as_tensor(rng.normal(size=(n_points, dim)) * 0.3))
            w = torch.as_tensor(rng.normal(size=(n_points, dim)) * 0.5)
            back = m.logmap(base, m.expmap(base, w))
            ok = torch.allclose(back, w, rtol=1e-7, atol=1e-7)
        res.check(bool(ok), f"{m.name}: log(exp(v)) != v")
        D = m.pairwise_dist(X)
        loop = torch.zeros_like(D)
        for i, j in itertools.product(range(n_points), repeat=2):
            if i != j:
                loop[i, j] = m.dist(X[i], X[j])
        res.check(bool((D - loop).abs().max() < 1e-7), f"{m.name}: matrix and loop distances differ")
        res.check(bool(torch.equal(D, D.T)) or bool((D - D.T).abs().max() < 1e-12), f"{m.name}: asymmetric")
        i, j, k = (torch.as_tensor(rng.integers(0, n_points, 1000)) for _ in range(3))
        tri = D[i, k] <= D[i, j] + D[j, k] + 1e-9
        res.check(bool(tri.all()), f"{m.name}: triangle inequality violated")
    return res


def gradcheck_instance(seed=0, n_nodes=12, n_features=6, edge_prob=0.3) -> Graph:
    """Small random attributed graph with standard normal features."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_nodes, n_features))
    iu, ju = np.triu_indices(n_nodes, k=1)
    keep = rng.random(iu.size) < edge_prob
    return Graph.from_edges(X, np.stack([iu[keep], ju[keep]], 1))


def suite_gradcheck(geometries=GEOMETRIES, alphas=(0.0, 0.5), seed=0, hidden=4, tol=1e-4) -> SuiteResult:
    res = SuiteResult("gradcheck")
    g = gradcheck_instance(seed)
    for geo, mp, alpha in itertools.product(geometries, (False, True), alphas):
        torch.manual_seed(seed)
        model = GADNet(ModelConfig(geometry=geo, feature_dim=g.feature_dim, hidden=hidden, message_passing=mp))
        report = grad_check(model, g, LossConfig(alpha=alpha), tol=tol)
        res.check(report.passed, f"{geo} mp={mp} alpha={alpha}: {report}")
    return res


SUITES = {
    "lemma1": suite_lemma1,
    "lemma2": suite_lemma2,
    "geometry": suite_geometry,
    "gradcheck": suite_gradcheck,
    "metrics": suite_metrics,
}


def run_suites(only=None, pairs=10000, geometries=GEOMETRIES, cases=1000, seed=0):
    names = list(only) if only else list(SUITES)
    out = []
    for name in names:
        if name == "lemma2":
            out.append(suite_lemma2(pairs, seed))
        elif name == "gradcheck":
            out.append(suite_gradcheck(tuple(geometries), seed=seed))
        elif name == "metrics":
            out.append(suite_metrics(cases, seed))
        elif name == "geometry":
            out.append(suite_geometry(seed))
        elif name == "lemma1":
            out.append(suite_lemma1())
        else:
            raise KeyError(name)
    return out

"""Ranking metrics, the norm-only baseline and multi-trial aggregation."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .graph import Graph

__all__ = [
    "roc_auc",
    "average_precision",
    "norm_baseline_score",
    "ScoreReport",
    "aggregate_trials",
    "config_fingerprint",
    "write_report_csv",
    "write_report_json",
]


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores contain non-finite values")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve in the Mann-Whitney form.

    Each (outlier, inlier) pair counts 1 when the outlier scores higher and
    1/2 on a tie. Computed from average ranks in ``O(n log n)``.

    Raises
    ------
    ValueError
        If ``labels`` contain a single class.
    """
    s, y = _check_binary(scores, labels)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - P * (P + 1) / 2.0
    return float(u / (P * N))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve.

    Thresholds run over the distinct scores in decreasing order; tied scores
    enter as a single step.

    Raises
    ------
    ValueError
        If there is no positive label.
    """
    s, y = _check_binary(scores, labels)
    P = int(y.sum())
    if P == 0:
        raise ValueError("average_precision needs at least one positive label")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / P
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def norm_baseline_score(g: Graph, alpha: float) -> np.ndarray:
    """``alpha * |x_i|_2 + (1 - alpha) * (deg(i) + 1)`` for every node."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    feat = np.linalg.norm(g.features, axis=1)
    return alpha * feat + (1.0 - alpha) * (g.degrees + 1.0)


def config_fingerprint(config) -> str:
    """Short stable hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScoreReport:
    """Scores and ranking metrics of one trial."""

    scores: np.ndarray
    labels: np.ndarray
    seed: int = 0
    fingerprint: str = ""
    roc_auc: float = field(init=False)
    ap: float = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.roc_auc = roc_auc(self.scores, self.labels)
        self.ap = average_precision(self.scores, self.labels)

    def summary(self) -> dict:
        return {"seed": self.seed, "fingerprint": self.fingerprint, "roc_auc": self.roc_auc, "ap": self.ap}


def aggregate_trials(reports) -> dict:
    """Mean and sample standard deviation of ROC-AUC and AP over trials."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {"trials": len(reports)}
    for key in ("roc_auc", "ap"):
        vals = np.array([getattr(r, key) for r in reports])
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return out


_COLUMNS = ["model", "setting", "trials", "roc_auc_mean", "roc_auc_std", "ap_mean", "ap_std"]


def write_report_csv(rows, path):
    """Write aggregated rows (``model``, ``setting`` plus :func:`aggregate_trials` keys)."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{row[k]:.10f}" if isinstance(row[k], float) else row[k]) for k in _COLUMNS})


def write_report_json(rows, path, per_trial=None):
    payload = {"rows": list(rows)}
    if per_trial is not None:
        payload["trials"] = [r.summary() if isinstance(r, ScoreReport) else r for r in per_trial]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)

"""Scikit-learn style node anomaly detectors.

Every detector takes a :class:`~hypgad.graph.Graph` (or an ``(X, A)`` pair)
in ``fit``. ``decision_function`` returns per-node scores, higher meaning
more anomalous, and ``predict`` flags the top ``contamination`` fraction of
the training scores.
"""

from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import Graph
from .metrics import norm_baseline_score
from .network import GADNet, ModelConfig, ReconAE, save_checkpoint
from .training import (LossConfig, reconstruction_scores, score_nodes, train,
                       train_reconstruction)

__all__ = ["check_graph", "BaseDetector", "NormScoreDetector", "HyperbolicGAD", "MLPAE", "GCNAE"]


def check_graph(G) -> Graph:
    """Coerce ``G`` into a :class:`Graph`.

    Accepts a ``Graph`` or a pair ``(X, A)`` with ``X`` an array-like of
    features and ``A`` a dense or sparse adjacency matrix.
    """
    if isinstance(G, Graph):
        return G
    if isinstance(G, tuple) and len(G) == 2:
        X, A = G
        X = np.asarray(X, dtype=np.float64)
        A = A if sp.issparse(A) else sp.csr_matrix(np.asarray(A))
        return Graph(X, A)
    raise TypeError(f"expected a Graph or an (X, A) pair, got {type(G).__name__}")


def _check_fraction(name, value, low=0.0, high=1.0, closed_high=True):
    ok = low <= value <= high if closed_high else low <= value < high
    if not ok:
        raise ValueError(f"{name}={value!r} outside [{low}, {high}{']' if closed_high else ')'}")


@contextlib.contextmanager
def _torch_threads(n):
    prev = torch.get_num_threads()
    if n:
        torch.set_num_threads(int(n))
    try:
        yield
    finally:
        torch.set_num_threads(prev)


class BaseDetector(BaseEstimator):
    """Shared ``fit_predict`` / ``predict`` logic.

    Subclasses implement ``_fit(graph)`` and ``_score(graph)``.
    """

    def __init__(self, contamination=0.05):
        self.contamination = contamination

    def fit(self, G, y=None):
        """Fit on graph ``G``; ``y`` is ignored (unsupervised)."""
        _check_fraction("contamination", self.contamination, 0.0, 0.5)
        graph = check_graph(G)
        self.n_features_in_ = graph.feature_dim
        self._fit(graph)
        self.decision_scores_ = self._score(graph)
        self.threshold_ = float(np.quantile(self.decision_scores_, 1.0 - self.contamination))
        self.labels_ = (self.decision_scores_ > self.threshold_).astype(np.int8)
        return self

    def decision_function(self, G):
        check_is_fitted(self, "decision_scores_")
        graph = check_graph(G)
        if graph.feature_dim != self.n_features_in_:
            raise ValueError(f"graph has {graph.feature_dim} features, detector was fit on {self.n_features_in_}")
        return self._score(graph)

    def predict(self, G):
        return (self.decision_function(G) > self.threshold_).astype(np.int8)

    def fit_predict(self, G, y=None):
        return self.fit(G).labels_


class NormScoreDetector(BaseDetector):
    """Scores ``alpha * |x_i| + (1 - alpha) * (deg(i) + 1)``; nothing is learned."""

    def __init__(self, alpha=0.0, contamination=0.05):
        super().__init__(contamination)
        self.alpha = alpha

    def _fit(self, graph):
        _check_fraction("alpha", self.alpha)

    def _score(self, graph):
        return norm_baseline_score(graph, self.alpha)


class HyperbolicGAD(BaseDetector):
    """Reconstruction autoencoder in Euclidean, Lorentz or Poincare geometry.

    Parameters
    ----------
    geometry : {"poincare", "lorentz", "euclidean"}
    hidden : int
        Width of every hidden layer.
    message_passing : bool
        Aggregate neighbours before each encoder layer.
    dropout : float
    alpha : float
        Weight of the attribute reconstruction term in loss and score.
    fermi_r, fermi_t : float
        Fermi-Dirac decoder parameters.
    lr, weight_decay, epochs, batch_size
        Optimization settings; ``batch_size=None`` trains full batch.
    contamination : float
        Fraction of training nodes flagged by ``predict``.
    random_state : int
        Seeds initialization, dropout and batch partitions.
    num_threads : int or None
        Torch intra-op threads during fit and scoring (1 keeps runs bit-reproducible).

    Attributes
    ----------
    model_ : GADNet
    loss_curve_ : list of dict
    decision_scores_ : ndarray of shape (n_nodes,)
    """

    def __init__(self, geometry="poincare", hidden=32, message_passing=False, dropout=0.1, alpha=0.0,
                 fermi_r=0.0, fermi_t=1.0, lr=5e-3, weight_decay=1e-3, epochs=300, batch_size=None,
                 contamination=0.05, random_state=0, num_threads=1):
        super().__init__(contamination)
        self.geometry = geometry
        self.hidden = hidden
        self.message_passing = message_passing
        self.dropout = dropout
        self.alpha = alpha
        self.fermi_r = fermi_r
        self.fermi_t = fermi_t
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.num_threads = num_threads

    def _loss_config(self):
        return LossConfig(alpha=self.alpha, fermi_r=self.fermi_r, fermi_t=self.fermi_t,
                          weight_decay=self.weight_decay, lr=self.lr, epochs=self.epochs,
                          batch_size=self.batch_size)

    def model_config(self, feature_dim):
        return ModelConfig(geometry=self.geometry, feature_dim=feature_dim, hidden=self.hidden,
                           message_passing=self.message_passing, dropout=self.dropout, alpha=self.alpha,
                           fermi_r=self.fermi_r, fermi_t=self.fermi_t)

    def _fit(self, graph):
        cfg = self._loss_config()
        with _torch_threads(self.num_threads):
            torch.manual_seed(int(self.random_state))
            self.model_ = GADNet(self.model_config(graph.feature_dim))
            result = train(self.model_, graph, cfg, seed=self.random_state)
        self.loss_curve_ = result.curve

    def _score(self, graph):
        with _torch_threads(self.num_threads):
            scores, self.loss_c_, self.loss_s_ = score_nodes(self.model_, graph, self._loss_config(),
                                                            seed=self.random_state)
        return scores

    def transform(self, G):
        """Structural embeddings ``H`` of every node (evaluation mode, full batch)."""
        check_is_fitted(self, "model_")
        graph = check_graph(G)
        self.model_.eval()
        with torch.no_grad():
            from .training import _GraphTensors
            X, _, adj_norm = _GraphTensors(graph, self.message_passing).batch()
            return self.model_(X, adj_norm, decode=False).H.numpy()

    def save(self, path):
        """Write the trained network as a checkpoint file."""
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path)


class MLPAE(BaseDetector):
    """Euclidean attribute autoencoder scored by per-node mean squared error."""

    _message_passing = False

    def __init__(self, hidden=32, dropout=0.0, lr=5e-3, weight_decay=0.0, epochs=100,
                 contamination=0.05, random_state=0, num_threads=1):
        super().__init__(contamination)
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state
        self.num_threads = num_threads

    def _fit(self, graph):
        cfg = LossConfig(lr=self.lr, weight_decay=self.weight_decay, epochs=self.epochs)
        with _torch_threads(self.num_threads):
            torch.manual_seed(int(self.random_state))
            self.model_ = ReconAE(graph.feature_dim, self.hidden, self._message_passing, self.dropout)
            self.loss_curve_ = train_reconstruction(self.model_, graph, cfg, seed=self.random_state).curve

    def _score(self, graph):
        with _torch_threads(self.num_threads):
            return reconstruction_scores(self.model_, graph)


class GCNAE(MLPAE):
    """:class:`MLPAE` with normalized neighbourhood averaging before every layer."""

    _message_passing = True

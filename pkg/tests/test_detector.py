import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hypgad.detector import GCNAE, MLPAE, HyperbolicGAD, NormScoreDetector, check_graph
from hypgad.graph import Graph
from hypgad.metrics import norm_baseline_score
from hypgad.network import load_checkpoint

from conftest import random_graph


def _fast(**kw):
    params = dict(geometry="poincare", hidden=8, epochs=5, lr=1e-2)
    params.update(kw)
    return HyperbolicGAD(**params)


def test_check_graph_accepts_pair():
    X = np.ones((3, 2))
    A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    g = check_graph((X, A))
    assert g.num_nodes == 3 and g.has_edge(0, 1)
    assert check_graph(g) is g


def test_check_graph_rejects_other():
    with pytest.raises(TypeError):
        check_graph(np.ones((3, 3)))


def test_params_round_trip():
    det = _fast(alpha=0.5, message_passing=True)
    params = det.get_params()
    assert params["alpha"] == 0.5 and params["message_passing"] is True
    twin = clone(det)
    assert twin.get_params() == params
    det.set_params(hidden=4)
    assert det.hidden == 4


def test_norm_detector_matches_baseline():
    g = random_graph(n=40)
    det = NormScoreDetector(alpha=0.3).fit(g)
    np.testing.assert_array_equal(det.decision_scores_, norm_baseline_score(g, 0.3))
    np.testing.assert_array_equal(det.decision_function(g), det.decision_scores_)


def test_contamination_sets_flag_count():
    g = random_graph(n=40)
    g = g.with_features(np.random.default_rng(0).normal(size=g.features.shape))
    det = NormScoreDetector(alpha=1.0, contamination=0.1).fit(g)
    assert det.labels_.sum() == 4
    np.testing.assert_array_equal(det.predict(g), det.labels_)
    np.testing.assert_array_equal(det.fit_predict(g), det.labels_)


def test_bad_contamination():
    with pytest.raises(ValueError):
        NormScoreDetector(contamination=0.7).fit(random_graph())


def test_bad_alpha():
    with pytest.raises(ValueError):
        NormScoreDetector(alpha=-0.1).fit(random_graph())


def test_unfitted():
    with pytest.raises(NotFittedError):
        _fast().decision_function(random_graph())


def test_feature_mismatch():
    det = NormScoreDetector().fit(random_graph(d=5))
    with pytest.raises(ValueError):
        det.decision_function(random_graph(d=4))


@pytest.mark.parametrize("geometry", ["euclidean", "lorentz", "poincare"])
def test_hyperbolic_gad_fit(geometry):
    g = random_graph(n=40)
    det = _fast(geometry=geometry, alpha=0.5).fit(g)
    assert det.decision_scores_.shape == (40,)
    assert np.isfinite(det.decision_scores_).all()
    assert len(det.loss_curve_) == 5
    H = det.transform(g)
    assert H.shape[0] == 40
    assert H.shape[1] == (9 if geometry == "lorentz" else 8)


def test_hyperbolic_gad_reproducible():
    g = random_graph(n=30)
    a = _fast(dropout=0.3).fit(g).decision_scores_
    b = _fast(dropout=0.3).fit(g).decision_scores_
    np.testing.assert_array_equal(a, b)


def test_num_threads_restored():
    before = torch.get_num_threads()
    _fast(num_threads=1).fit(random_graph())
    assert torch.get_num_threads() == before


def test_save_checkpoint(tmp_path):
    g = random_graph(n=30)
    det = _fast(geometry="lorentz").fit(g)
    det.save(tmp_path / "m.pt")
    _, state = load_checkpoint(tmp_path / "m.pt")
    for name, p in det.model_.named_parameters():
        assert torch.equal(state[name], p.detach())


@pytest.mark.parametrize("cls", [MLPAE, GCNAE])
def test_reconstruction_baselines(cls):
    g = random_graph(n=40)
    det = cls(hidden=8, epochs=20).fit(g)
    assert det.decision_scores_.shape == (40,)
    assert (det.decision_scores_ >= 0).all()
    assert det.loss_curve_[-1]["loss"] < det.loss_curve_[0]["loss"]


def test_mlpae_flags_feature_outlier():
    # 29 identical rows and one different row: the odd one reconstructs worst
    X = np.tile([1.0, 0.0, 0.0], (30, 1))
    X[7] = [0.0, 0.0, 1.0]
    g = Graph.from_edges(X, [(i, i + 1) for i in range(29)])
    det = MLPAE(hidden=2, epochs=300, lr=1e-2).fit(g)
    assert int(np.argmax(det.decision_scores_)) == 7

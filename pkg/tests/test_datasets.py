import numpy as np
import pytest

from hypgad.datasets import find_cora, load_cora, synthetic_citation_graph


def test_synthetic_shape_and_determinism():
    a = synthetic_citation_graph(n_nodes=300, n_features=80, n_edges=600, n_classes=4, seed=2)
    b = synthetic_citation_graph(n_nodes=300, n_features=80, n_edges=600, n_classes=4, seed=2)
    assert a.features.shape == (300, 80)
    assert set(np.unique(a.features)) <= {0.0, 1.0}
    assert set(a.class_labels.tolist()) <= set(range(4))
    np.testing.assert_array_equal(a.features, b.features)
    assert (a.adjacency != b.adjacency).nnz == 0
    assert 0 < a.num_edges <= 600


def test_synthetic_is_homophilous():
    g = synthetic_citation_graph(n_nodes=500, n_features=100, n_edges=1000, homophily=0.9, seed=0)
    e = g.edge_array()
    same = np.mean(g.class_labels[e[:, 0]] == g.class_labels[e[:, 1]])
    assert same > 0.8


def test_find_cora_from_env(tmp_path, monkeypatch):
    (tmp_path / "cora.content").write_text("a 1 0 x\nb 0 1 y\n")
    (tmp_path / "cora.cites").write_text("a b\n")
    monkeypatch.setenv("HYPGAD_CORA_DIR", str(tmp_path))
    assert find_cora() == tmp_path
    g = load_cora()
    assert g.num_nodes == 2 and g.has_edge(0, 1)


def test_missing_cora(tmp_path, monkeypatch):
    monkeypatch.setenv("HYPGAD_CORA_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HOME", str(tmp_path))
    if find_cora() is not None:
        pytest.skip("a Cora copy sits inside the repository")
    with pytest.raises(FileNotFoundError):
        load_cora()

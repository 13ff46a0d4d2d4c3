import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from hypgad.graph import Graph
from hypgad.injection import (InjectionError, InjectionSpec, _dice, _path, default_spec, inject,
                              inject_contextual, inject_dice_n, inject_mixture, inject_path,
                              inject_structural, save_injection)
from hypgad.metrics import norm_baseline_score, roc_auc

from conftest import path_graph, random_graph


def _changed_rows(a, b):
    return np.flatnonzero(np.any(a.features != b.features, axis=1))


class TestContextual:
    def test_identical_rows_unchanged(self):
        g = Graph(np.ones((5, 3)), sp.csr_matrix((5, 5)))
        res = inject_contextual(g, o=1, q=4, seed=0)
        np.testing.assert_array_equal(res.graph.features, g.features)

    def test_farthest_in_normalized_space(self):
        X = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [10, 0, 0]], dtype=float)
        g = Graph(X, sp.csr_matrix((4, 4)))
        seed = next(s for s in range(200) if inject_contextual(g, 1, 3, seed=s).outlier_ids.tolist() == [0])
        res = inject_contextual(g, 1, 3, seed=seed)
        # (10,0,0) normalizes onto x_0 itself; e_2 and e_3 tie and the smaller index wins
        np.testing.assert_array_equal(res.graph.features[0], [0, 1, 0])
        assert res.log[0]["source"] == 1

    def test_copies_unnormalized_row(self):
        X = np.array([[1, 0], [0, 5], [2, 0], [3, 0]], dtype=float)
        g = Graph(X, sp.csr_matrix((4, 4)))
        for s in range(50):
            res = inject_contextual(g, 1, 3, seed=s)
            if res.outlier_ids[0] != 1:
                np.testing.assert_array_equal(res.graph.features[res.outlier_ids[0]], [0, 5])

    def test_too_many(self):
        with pytest.raises(InjectionError):
            inject_contextual(random_graph(n=10), o=5, q=6)


class TestStructural:
    def test_p0_on_empty_graph(self):
        g = Graph(np.zeros((30, 2)), sp.csr_matrix((30, 30)))
        res = inject_structural(g, o=20, s=5, p=0.0, seed=1)
        deg = res.graph.degrees
        assert (deg[res.outlier_ids] == 4).all()
        assert deg.sum() == 4 * 20

    def test_p1_removes_all_in_group_edges(self):
        n = 20
        full = np.ones((n, n)) - np.eye(n)
        g = Graph(np.zeros((n, 1)), sp.csr_matrix(full))
        res = inject_structural(g, o=10, s=5, p=1.0, seed=2)
        for grp in res.log["_groups"]:
            m = grp["members"]
            assert res.graph.adjacency[m][:, m].nnz == 0
            assert len(grp["removed"]) == 10

    def test_groups_partition_candidates(self):
        res = inject_structural(random_graph(n=60), o=20, s=10, seed=3)
        members = sorted(v for grp in res.log["_groups"] for v in grp["members"])
        assert members == res.outlier_ids.tolist()

    def test_s_must_divide_o(self):
        with pytest.raises(InjectionError):
            inject_structural(random_graph(), o=7, s=3)


class TestPath:
    def test_picks_farthest_reference(self):
        g = path_graph(5)
        log = {}
        newX = _path(g, [0], np.array([0]), np.array([1, 4]), 2, np.random.default_rng(0), log)
        np.testing.assert_array_equal(newX[0], g.features[4])
        assert log[0]["hops"] == 4

    def test_unreachable_reference_wins(self):
        g = Graph.from_edges(np.eye(6), [(0, 1), (1, 2), (3, 4), (4, 5)])
        log = {}
        newX = _path(g, [0], np.array([0]), np.array([2, 4]), 2, np.random.default_rng(0), log)
        np.testing.assert_array_equal(newX[0], g.features[4])
        assert log[0]["hops"] is None

    def test_isolated_nodes_never_chosen(self):
        g = Graph.from_edges(np.eye(12), [(i, i + 1) for i in range(8)])
        for s in range(10):
            res = inject_path(g, o=3, q=3, seed=s)
            assert set(res.outlier_ids.tolist()) <= set(range(9))
            assert all(entry["source"] < 9 for entry in res.log.values())

    def test_not_enough_eligible(self):
        g = Graph.from_edges(np.eye(6), [(0, 1), (1, 2)])
        with pytest.raises(InjectionError):
            inject_path(g, o=2, q=2)


class TestDice:
    def _star(self):
        # node 0 with four same-class neighbours, nodes 5..9 of another class
        y = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        return Graph.from_edges(np.eye(10), [(0, k) for k in range(1, 5)], class_labels=y)

    def test_half_of_four(self):
        g = self._star()
        nbrs = [set(g.neighbors(i).tolist()) for i in range(10)]
        protected = np.zeros(10, bool)
        protected[0] = True
        log = {}
        _dice(nbrs, g.class_labels, [0], protected, 0.5, np.random.default_rng(0), log, 10)
        assert log[0]["k"] == 2
        assert len(log[0]["removed"]) == 2 and len(log[0]["added"]) == 2
        assert len(nbrs[0]) == 4
        assert all(g.class_labels[j] == 1 for j in log[0]["added"])

    def test_no_same_class_neighbours(self):
        y = np.array([0, 1, 1])
        g = Graph.from_edges(np.eye(3), [(0, 1)], class_labels=y)
        nbrs = [set(g.neighbors(i).tolist()) for i in range(3)]
        log = {}
        _dice(nbrs, y, [0], np.array([True, False, False]), 0.5, np.random.default_rng(0), log, 3)
        assert log[0]["k"] == 0 and nbrs[0] == {1}

    def test_degree_preserved(self, sparse_graph):
        res = inject_dice_n(sparse_graph, o=100, r=0.5, seed=4)
        ids = res.outlier_ids
        assert all(res.log[int(i)]["shortfall"] == 0 for i in ids)
        np.testing.assert_array_equal(res.graph.degrees[ids], sparse_graph.degrees[ids])
        np.testing.assert_array_equal(res.graph.features, sparse_graph.features)


class TestMixture:
    def test_zero_contextual_equals_structural_alone(self):
        g = random_graph(n=60)
        a = inject_mixture(g, InjectionSpec({"contextual": 0, "structural": 20}, s=10, seed=9))
        b = inject_structural(g, o=20, s=10, seed=9)
        np.testing.assert_array_equal(a.outlier_ids, b.outlier_ids)
        assert (a.graph.adjacency != b.graph.adjacency).nnz == 0

    def test_default_spec_splits_evenly(self):
        spec = default_spec("cntxt+strct", o=140)
        assert spec.kinds == {"contextual": 70, "structural": 70}
        assert spec.q == spec.s == 10

    def test_total_exceeds_nodes(self):
        with pytest.raises(InjectionError):
            inject(random_graph(n=10), InjectionSpec({"contextual": 6, "dice_n": 6}))

    def test_unknown_kind(self):
        with pytest.raises(InjectionError):
            InjectionSpec({"weird": 3})

    def test_save_writes_log(self, tmp_path):
        res = inject(random_graph(n=60), default_spec("path+dice", o=10, seed=0))
        paths = save_injection(res, tmp_path)
        payload = json.loads(open(paths["log"]).read())
        assert payload["outlier_ids"] == res.outlier_ids.tolist()
        assert np.loadtxt(paths["outliers"]).sum() == 10


@given(st.sampled_from(["contextual", "structural", "path", "dice_n"]),
       st.integers(1, 4), st.integers(0, 2 ** 31))
def test_kind_invariants(kind, groups, seed):
    g = random_graph(n=60, p=0.1, seed=seed % 7)
    o = 5 * groups
    spec = InjectionSpec({kind: o}, s=5, q=5, seed=seed)
    a, b = inject(g, spec), inject(g, InjectionSpec({kind: o}, s=5, q=5, seed=seed))
    # deterministic, exactly o outliers
    np.testing.assert_array_equal(a.outlier_ids, b.outlier_ids)
    np.testing.assert_array_equal(a.graph.features, b.graph.features)
    assert (a.graph.adjacency != b.graph.adjacency).nnz == 0
    assert a.outlier_ids.size == o == a.graph.outlier_labels.sum()
    changed = _changed_rows(a.graph, g)
    if kind in ("contextual", "path"):
        assert (a.graph.adjacency != g.adjacency).nnz == 0
        assert set(changed.tolist()) <= set(a.outlier_ids.tolist())
    else:
        assert changed.size == 0


def test_norm_separability_on_sparse_graph(sparse_graph):
    strct, dice = [], []
    for seed in range(3):
        res = inject_structural(sparse_graph, o=100, s=10, p=0.2, seed=seed)
        strct.append(roc_auc(norm_baseline_score(res.graph, 0.0), res.graph.outlier_labels))
        res = inject_dice_n(sparse_graph, o=100, r=0.5, seed=seed)
        dice.append(roc_auc(norm_baseline_score(res.graph, 0.0), res.graph.outlier_labels))
    assert np.mean(strct) >= 0.85
    assert 0.45 <= np.mean(dice) <= 0.55


def test_log_records_every_outlier():
    res = inject(random_graph(n=80, p=0.1), default_spec("cntxt+strct", o=20, s=10, seed=5))
    kinds = {res.log[int(i)]["kind"] for i in res.outlier_ids}
    assert kinds == {"contextual", "structural"}
    assert math.isclose(sum(1 for k in res.log if k != "_groups"), 20)

import csv
import json
import os

import numpy as np
import pytest

from hypgad.cli import main
from hypgad.datasets import synthetic_citation_graph
from hypgad.graph import load_tsv, write_tsv

from conftest import random_graph


@pytest.fixture(scope="module")
def citation_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("citation")
    g = synthetic_citation_graph(n_features=200, seed=3)
    return write_tsv(g, d, "base")


@pytest.fixture
def small_files(tmp_path):
    return write_tsv(random_graph(n=60, d=6, p=0.1), tmp_path / "in", "small")


def _data(paths):
    return ["--features", paths["features"], "--edges", paths["edges"], "--labels", paths["labels"]]


def test_inject_structural_writes_140_labels(citation_files, tmp_path):
    out = tmp_path / "out"
    code = main(["inject", *_data(citation_files), "--kind", "structural", "--o", "140", "--s", "10",
                 "--p", "0.2", "--seed", "1", "--out", str(out)])
    assert code == 0
    y = np.loadtxt(out / "injected.outliers.tsv")
    assert y.size == 2708 and y.sum() == 140
    log = json.load(open(out / "injected.log.json"))
    assert len(log["outlier_ids"]) == 140 and len(log["changes"]["_groups"]) == 14


def test_inject_dice_preserves_degree(small_files, tmp_path):
    out = tmp_path / "out"
    assert main(["inject", *_data(small_files), "--kind", "dice", "--o", "5", "--r", "0.5",
                 "--out", str(out)]) == 0
    log = json.load(open(out / "injected.log.json"))
    before = load_tsv(small_files["features"], small_files["edges"]).degrees
    after = load_tsv(out / "injected.features.tsv", out / "injected.edges.tsv").degrees
    for i in log["outlier_ids"]:
        entry = log["changes"][str(i)]
        assert len(entry["removed"]) == len(entry["added"])
        assert before[i] == after[i]


def test_inject_mixed_kinds_split(small_files, tmp_path):
    out = tmp_path / "out"
    assert main(["inject", *_data(small_files), "--kind", "contextual", "--kind", "structural",
                 "--o", "10", "--s", "5", "--q", "5", "--out", str(out)]) == 0
    log = json.load(open(out / "injected.log.json"))
    kinds = [log["changes"][str(i)]["kind"] for i in log["outlier_ids"]]
    assert kinds.count("contextual") == kinds.count("structural") == 5


def test_missing_o_is_usage_error(small_files, capsys):
    assert main(["inject", *_data(small_files), "--kind", "structural"]) == 2


def test_unknown_subcommand():
    assert main(["train"]) == 2


def test_cora_needs_both_files(small_files, tmp_path):
    assert main(["inject", "--content", small_files["features"], "--kind", "path", "--o", "2",
                 "--out", str(tmp_path)]) == 2


def test_bad_file_is_runtime_error(tmp_path):
    bad = tmp_path / "f.tsv"
    bad.write_text("1 2\n3\n")
    edges = tmp_path / "e.tsv"
    edges.write_text("0 1\n")
    assert main(["inject", "--features", str(bad), "--edges", str(edges), "--kind", "path", "--o", "1",
                 "--out", str(tmp_path)]) == 1


def test_infeasible_injection_is_runtime_error(small_files, tmp_path):
    assert main(["inject", *_data(small_files), "--kind", "structural", "--o", "7", "--s", "5",
                 "--out", str(tmp_path)]) == 1


def test_score_norm_baseline(citation_files, tmp_path):
    out = tmp_path / "out"
    code = main(["score", *_data(citation_files), "--baseline", "norm", "--alpha", "0",
                 "--setting", "strct", "--o", "140", "--trials", "2", "--out", str(out)])
    assert code == 0
    row = next(csv.DictReader(open(out / "metrics.csv")))
    assert row["model"] == "norm" and int(row["trials"]) == 2
    assert float(row["roc_auc_mean"]) > 0.8
    assert sorted(os.listdir(out)) == ["metrics.csv", "metrics.json", "scores_norm_strct_seed0.tsv",
                                       "scores_norm_strct_seed1.tsv"]


def test_score_is_byte_reproducible(small_files, tmp_path):
    args = [*_data(small_files), "--geometry", "lorentz", "--hidden", "4", "--epochs", "3",
            "--setting", "cntxt+strct", "--o", "10", "--s", "5", "--seeds", "4"]
    for name in ("a", "b"):
        assert main(["score", *args, "--dump-distances", "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "scores_lorentz_cntxt+strct_seed4.tsv", "distances_lorentz_cntxt+strct_seed4.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "distances_lorentz_cntxt+strct_seed4.tsv").read_text().splitlines()[0]
    assert header == "pair\ti\tj\tdistance"


def test_score_given_outliers(small_files, tmp_path):
    y = np.zeros(60, dtype=int)
    y[:3] = 1
    np.savetxt(tmp_path / "y.tsv", y, fmt="%d")
    assert main(["score", *_data(small_files), "--outliers", str(tmp_path / "y.tsv"), "--baseline", "norm",
                 "--trials", "1", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "scores_norm_given_seed0.tsv").exists()


def test_score_trials_seed_mismatch(small_files, tmp_path):
    assert main(["score", *_data(small_files), "--baseline", "norm", "--trials", "2", "--seeds", "1",
                 "--out", str(tmp_path)]) == 2


def test_output_env_default(small_files, tmp_path, monkeypatch):
    monkeypatch.setenv("HYPGAD_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["score", *_data(small_files), "--baseline", "norm", "--setting", "strct", "--o", "10",
                 "--s", "5", "--trials", "1"]) == 0
    assert (tmp_path / "env" / "metrics.csv").exists()


def test_config_file_and_override(small_files, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"features": small_files["features"], "edges": small_files["edges"],
                               "baseline": "norm", "setting": "strct", "o": 10, "s": 5,
                               "trials": 1, "alpha": 0.0, "out": str(tmp_path / "cfg")}))
    assert main(["--config", str(cfg), "score", "--alpha", "1.0"]) == 0
    payload = json.load(open(tmp_path / "cfg" / "metrics.json"))
    assert payload["rows"][0]["model"] == "norm"
    # alpha=1 from the flag wins: the score is the norm of the l1-normalized feature row
    X = np.loadtxt(small_files["features"])
    X /= np.abs(X).sum(1, keepdims=True)
    scores = np.loadtxt(tmp_path / "cfg" / "scores_norm_strct_seed0.tsv", skiprows=1)[:, 1]
    np.testing.assert_allclose(scores, np.linalg.norm(X, axis=1), rtol=1e-15)


def test_config_unknown_key(small_files, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"features": small_files["features"], "bogus": 1}))
    assert main(["--config", str(cfg), "score", "--edges", small_files["edges"]]) == 2


def test_config_unreadable(tmp_path):
    assert main(["--config", str(tmp_path / "missing.json"), "verify"]) == 2


def test_verify_lemma2(capsys):
    assert main(["verify", "--only", "lemma2", "--pairs", "500"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS lemma2")


def test_verify_metrics_and_lemma1(capsys):
    assert main(["verify", "--only", "metrics", "--only", "lemma1", "--cases", "100"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[:2] for ln in lines] == [["PASS", "metrics:"], ["PASS", "lemma1:"]]


def test_worker_pool_matches_serial(small_files, tmp_path):
    args = [*_data(small_files), "--baseline", "norm", "--setting", "cntxt", "--o", "10", "--q", "5",
            "--seeds", "0", "1"]
    assert main(["score", *args, "--jobs", "2", "--out", str(tmp_path / "pool")]) == 0
    assert main(["score", *args, "--out", str(tmp_path / "serial")]) == 0
    assert (tmp_path / "pool" / "metrics.csv").read_bytes() == (tmp_path / "serial" / "metrics.csv").read_bytes()


def test_verify_failure_exit_code(monkeypatch, capsys):
    from hypgad import verify

    def broken(cases, seed):
        res = verify.SuiteResult("metrics")
        res.check(False, "forced failure")
        return res

    monkeypatch.setattr(verify, "suite_metrics", broken)
    assert main(["verify", "--only", "metrics"]) == 1
    assert "forced failure" in capsys.readouterr().out

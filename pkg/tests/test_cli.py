import csv
import json

import pytest

from smoothkomlos.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from smoothkomlos.instances import read_matrix

SMALL = ["--d", "4", "--n", "32", "--window-samples", "1000"]


def _run(*args):
    return main([str(a) for a in args])


def test_seed_is_mandatory(tmp_path):
    assert _run("walk", "--out", tmp_path) == EXIT_CONFIG


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run("walk", "--config", bad, "--seed", 1, "--out", tmp_path) == EXIT_CONFIG
    bad.write_text(json.dumps({"seed": 1, "colour": "red"}))
    assert _run("walk", "--config", bad, "--out", tmp_path) == EXIT_CONFIG
    assert _run("walk", "--seed", 1, "--sigma", 2.0, "--out", tmp_path) == EXIT_CONFIG
    assert _run("walk", "--seed", 1, "--kind", "nope", "--out", tmp_path) == EXIT_CONFIG
    assert _run("nosuchcommand") == EXIT_CONFIG


def test_io_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert _run("gen", "--seed", 1, "--out", blocker / "sub") == EXIT_IO
    assert _run("walk", "--seed", 1, "--matrix", tmp_path / "missing.txt", "--out", tmp_path) == EXIT_IO


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "d": 2, "n": 5, "kind": "zero"}))
    assert _run("gen", "--config", cfg, "--n", 7, "--out", tmp_path) == EXIT_OK
    assert read_matrix(tmp_path / "matrix.txt").shape == (2, 7)
    meta = json.loads((tmp_path / "gen.json").read_text())
    assert meta["config"]["seed"] == 3 and meta["config"]["kind"] == "zero"


def test_walk_zero_matrix(tmp_path):
    assert _run("walk", "--seed", 1, "--kind", "zero", "--samples", 70, "--out", tmp_path, *SMALL) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "walk.csv").open()))
    assert len(rows) == 70
    assert all(float(r["norm2"]) == 0.0 for r in rows)
    assert all(1 <= int(r["iterations"]) <= 32 for r in rows)
    summary = json.loads((tmp_path / "walk_summary.json").read_text())
    assert summary["samples"] == 70


def test_walk_byte_identical_across_workers(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("walk", "--seed", 5, "--samples", 130, "--workers", 1, "--out", a, *SMALL) == EXIT_OK
    assert _run("walk", "--seed", 5, "--samples", 130, "--workers", 2, "--out", b, *SMALL) == EXIT_OK
    for name in ("walk.csv", "walk_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_moments_rows(tmp_path, capsys):
    args = ["moments", "--seed", 2, "--d", 4, "--n-list", "32,64,128", "--pairs", 100, "--out", tmp_path]
    assert _run(*args) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "moments.csv").open()))
    assert [int(r["n"]) for r in rows] == [32, 64, 128]
    assert all(r["claim3_viol"] == "0" for r in rows)
    assert all(float(r["ratio"]) > 0 for r in rows)
    assert _run(*args, "--Delta", 0.5) == EXIT_CONFIG


def test_verify_default_config_passes(tmp_path, capsys):
    assert _run("verify", "--seed", 3, "--out", tmp_path, "--workers", 1) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "tail_test_x" in out


def test_verify_detects_constant_coloring(tmp_path, capsys):
    args = ["verify", "--seed", 3, "--out", tmp_path, "--fault", "constant_coloring",
            "--tail-samples", 1000, "--mgf-samples", 1000, "--d", 4, "--n", 64]  # fmt: skip
    assert _run(*args) == EXIT_CHECK
    err = capsys.readouterr().err
    assert "FAILED tail_test_x" in err


def test_verify_json_schema(tmp_path, capsys):
    args = ["verify", "--seed", 4, "--out", tmp_path, "--json", "--tail-samples", 1000,
            "--mgf-samples", 1000, "--directions", 10]  # fmt: skip
    _run(*args)
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"config", "window", "checks", "passed"}
    assert set(report["window"]) == {"r", "width", "mass", "samples"}
    names = [c["name"] for c in report["checks"]]
    assert names == ["tail_test_x", "tail_test_Mx", "window_norms", "mgf_walk_alpha1",
                     "mgf_stacked_alpha2", "exp_moment", "claim3", "claim4"]  # fmt: skip
    for c in report["checks"]:
        assert set(c) == {"name", "passed", "report"} and isinstance(c["passed"], bool)
    assert report["passed"] == all(c["passed"] for c in report["checks"])


def test_discrepancy_single_sample(tmp_path, capsys):
    assert _run("discrepancy", "--seed", 1, "--samples", 1, "--json", "--out", tmp_path, *SMALL) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["gs_min"] == rep["gs_median"]
    assert rep["uniform_min"] == rep["uniform_median"]


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_discrepancy_respects_exhaustive_min(tmp_path, capsys, seed):
    args = ["discrepancy", "--seed", seed, "--d", 3, "--n", 14, "--samples", 30, "--json", "--out", tmp_path]
    assert _run(*args) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["gs_min"] >= rep["exhaustive_min"] - 1e-12
    assert rep["uniform_min"] >= rep["exhaustive_min"] - 1e-12

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from trimprune.cli import main
from trimprune.tensor import load_container


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture
def demo(tmp_path):
    assert run("demo", "--out", tmp_path) == 0
    return tmp_path


def test_score_allocate_prune_eval(demo):
    d = demo
    assert run("score", "--model", d / "model.tnsr", "--calib", d / "calib.tnsr",
               "--out", d / "scores.tnsr") == 0
    assert set(load_container(d / "scores.tnsr")) == {"layer0.score", "layer1.score"}
    assert run("allocate", "--scores", d / "scores.tnsr", "--method", "owl", "--t", 0.7,
               "--out", d / "alloc.json") == 0
    alloc = json.loads((d / "alloc.json").read_text())
    assert alloc["method"] == "owl" and len(alloc["layers"]) == 2
    assert run("prune", "--model", d / "model.tnsr", "--calib", d / "calib.tnsr",
               "--allocation", d / "alloc.json", "--out", d / "run.tnsr") == 0
    report = json.loads((d / "run.report.json").read_text())
    sizes = [512, 256]
    total = round(sum(l["t"] * s for l, s in zip(alloc["layers"], sizes)))
    assert sum(l["pruned"] for l in report["layers"]) == total
    for layer in report["layers"]:
        assert layer["q_best"] >= layer["q_uniform"]
    c = load_container(d / "run.tnsr")
    assert np.all(c["layer0.weight"][c["layer0.mask"] == 1] == 0)
    assert run("eval", "--model", d / "model.tnsr", "--run", d / "run.tnsr",
               "--report", d / "run.report.json", "--out", d / "eval.json") == 0
    ev = json.loads((d / "eval.json").read_text())
    assert 0 < ev["global"]["end_to_end_cosine"] <= 1


def test_prune_uniform_synthetic_calib(demo):
    assert run("prune", "--model", demo / "model.tnsr", "--t", 0.5, "--no-trim",
               "--seed", 3, "--out", demo / "u.tnsr") == 0
    report = json.loads((demo / "u.report.json").read_text())
    assert report["calib_seed"] == 3 and not report["trim"]
    assert all(l["chosen_lr"] == 0 for l in report["layers"])


def test_eval_rejects_reused_seed(demo):
    assert run("prune", "--model", demo / "model.tnsr", "--t", 0.5, "--seed", 7,
               "--out", demo / "r.tnsr") == 0
    assert run("eval", "--model", demo / "model.tnsr", "--run", demo / "r.tnsr",
               "--report", demo / "r.report.json", "--holdout-seed", 7,
               "--out", demo / "e.json") == 2


def test_diagnose_outputs(demo):
    m = demo / "model.tnsr"
    assert run("diagnose", "curve", "--model", m, "--out-dir", demo / "dg") == 0
    with open(demo / "dg" / "curve.csv") as fh:
        header = next(csv.reader(fh))
    assert len(header) == 2 + 20
    assert run("diagnose", "gini", "--model", m, "--out-dir", demo / "dg") == 0
    assert sum(json.loads((demo / "dg" / "gini.json").read_text())["layers"][0]["counts"]) == 32
    assert run("diagnose", "remove-one", "--model", m, "--out-dir", demo / "dg") == 0
    arms = json.loads((demo / "dg" / "remove_one.json").read_text())["arms"]
    assert set(arms) == {"min_norm", "max_norm", "random"}
    assert run("diagnose", "outlier-stress", "--model", m, "--out-dir", demo / "dg") == 0


def test_exit_codes(demo, tmp_path):
    m = demo / "model.tnsr"
    assert run("score", "--model", m, "--metric", "random", "--out", tmp_path / "s") == 2
    bad = tmp_path / "bad.tnsr"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert run("score", "--model", m, "--calib", bad, "--out", tmp_path / "s") == 3
    assert run("prune", "--model", m, "--t", 0.99, "--out", tmp_path / "p.tnsr") == 2
    assert run("prune", "--model", m, "--out", tmp_path / "p.tnsr") == 2
    assert run("score", "--model", tmp_path / "missing.tnsr", "--out", tmp_path / "s") == 2
    assert run("score", "--model", m, "--metric", "sparsegpt", "--damping", 0,
               "--out", tmp_path / "s") == 2


def test_help_shows_defaults(capsys):
    assert run("prune", "--help") == 0
    out = capsys.readouterr().out
    assert "0.95" in out and "cosim_flat" in out and "per_output" in out


def test_module_entry_point(demo):
    res = subprocess.run([sys.executable, "-m", "trimprune", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "prune" in res.stdout


def test_owl_allocation_range(demo):
    assert run("score", "--model", demo / "model.tnsr", "--calib", demo / "calib.tnsr",
               "--out", demo / "s.tnsr") == 0
    assert run("allocate", "--scores", demo / "s.tnsr", "--method", "owl", "--t", 0.7,
               "--owl-m", 5, "--owl-lambda", 0.12, "--out", demo / "a.json") == 0
    layers = json.loads((demo / "a.json").read_text())["layers"]
    assert all(0.58 - 1e-12 <= l["t"] <= 0.82 + 1e-12 for l in layers)
    mean = sum(l["t"] * l["params"] for l in layers) / sum(l["params"] for l in layers)
    assert mean == pytest.approx(0.7, abs=1e-9)
    assert run("allocate", "--scores", demo / "s.tnsr", "--t", 0.7, "--out", demo / "u.json") == 0
    assert all(l["t"] == 0.7 for l in json.loads((demo / "u.json").read_text())["layers"])
    assert run("allocate", "--method", "import", "--import", demo / "a.json",
               "--out", demo / "b.json") == 0
    assert (demo / "b.json").read_text() == (demo / "a.json").read_text()


def test_trim_arm_never_below_uniform_arm(demo):
    common = ["--model", demo / "model.tnsr", "--calib", demo / "calib.tnsr", "--t", 0.7]
    assert run("prune", *common, "--no-trim", "--out", demo / "u.tnsr") == 0
    assert run("prune", *common, "--out", demo / "t.tnsr") == 0
    assert run("prune", *common, "--recalc", "--out", demo / "r.tnsr") == 0
    uni = json.loads((demo / "u.report.json").read_text())["layers"]
    trim = json.loads((demo / "t.report.json").read_text())["layers"]
    assert all(t["q_best"] >= u["q_best"] for t, u in zip(trim, uni))
    a, b = load_container(demo / "t.tnsr"), load_container(demo / "r.tnsr")
    for name in ("layer0.score", "layer1.score"):
        assert a[name].tobytes() == b[name].tobytes()


def test_gini_csv(demo):
    assert run("diagnose", "gini", "--model", demo / "model.tnsr", "--out-dir", demo / "g") == 0
    with open(demo / "g" / "gini.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 32 + 8
    assert all(0 <= float(r["gini"]) < 1 for r in rows)

"""End-to-end command tests, run in process through ``main``.

Each command writes its primary artifact plus a manifest sidecar; the
tests check exit codes, payload fields, manifest wiring, and byte-level
reproducibility of seeded reruns.
"""

import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

import paft.cli as cli
from paft.cli import main
from paft.data import load_dataset, serialize_dataset
from paft.errors import ResamplingError

from conftest import make_dataset

DESIGN = {
    "n": 30,
    "alpha": 1.0,
    "tau": 1.5,
    "beta": [0.5],
    "covariates": [{"kind": "normal", "mean": 0.4, "var": 0.36}],
    "allocation": 0.5,
    "censor_target": None,
    "censor_upper": 14.0,
}


@pytest.fixture
def data_csv(tmp_path):
    ds = make_dataset(np.random.default_rng(42), n=24, d=1)
    path = tmp_path / "trial.csv"
    path.write_text(serialize_dataset(ds), encoding="utf-8")
    return path


@pytest.fixture
def design_json(tmp_path):
    path = tmp_path / "design.json"
    path.write_text(json.dumps(DESIGN), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


# -- fit -------------------------------------------------------------------


def test_fit_writes_artifact_and_manifest(tmp_path, data_csv):
    out = tmp_path / "fit.json"
    rc = main([
        "fit", "--data", str(data_csv), "--out", str(out),
        "--optimizer", "bfgs", "--init", "0.5,1.0,0.0",
    ])
    assert rc == 0
    doc = read_json(out)
    assert doc["schema_version"] == "1"
    assert doc["manifest"] == "fit.manifest.json"
    assert doc["command"] == "fit"
    assert doc["n"] == 24
    assert set(doc["params"]) == {"alpha", "tau", "beta"}
    assert doc["params"]["beta"].keys() == {"x1"}
    assert doc["params"]["tau"] >= 0.0
    assert len(doc["stages"]) == 1
    assert isinstance(doc["loglik"], float) and isinstance(doc["bandwidth"], float)

    man = read_json(tmp_path / "fit.manifest.json")
    assert man["command"] == "fit"
    assert man["tool"] == "paft"
    assert man["outputs"] == ["fit.json"]
    assert man["config"]["optimizer"] == "bfgs"
    assert man["config"]["init"] == [0.5, 1.0, 0.0]
    # recorded digest matches the input file
    digest = hashlib.sha256(data_csv.read_bytes()).hexdigest()
    assert man["inputs"][str(data_csv)] == digest
    assert "wall_time_s" in man


def test_fit_default_init_and_stages(tmp_path, data_csv):
    out = tmp_path / "fit.json"
    rc = main([
        "fit", "--data", str(data_csv), "--out", str(out),
        "--optimizer", "bfgs", "--stages", "2", "--bandwidth-tol", "0.0",
    ])
    assert rc == 0
    doc = read_json(out)
    assert [st["stage"] for st in doc["stages"]] == [1, 2]
    assert read_json(tmp_path / "fit.manifest.json")["config"]["stages"] == {
        "max_stages": 2,
        "bandwidth_tol": 0.0,
    }


def test_fit_unadjusted_drops_covariates(tmp_path, data_csv):
    out = tmp_path / "fit.json"
    rc = main([
        "fit", "--data", str(data_csv), "--out", str(out),
        "--optimizer", "bfgs", "--unadjusted", "--init", "0.5,1.0",
    ])
    assert rc == 0
    doc = read_json(out)
    assert doc["covariates"] == []
    assert doc["params"]["beta"] == {}


# -- simulate ---------------------------------------------------------------


def test_simulate_writes_loadable_dataset(tmp_path, design_json):
    out = tmp_path / "sim.csv"
    emitted = tmp_path / "design_used.json"
    rc = main([
        "simulate", "--design", str(design_json), "--seed", "9",
        "--out", str(out), "--emit-design", str(emitted),
    ])
    assert rc == 0
    text = out.read_text(encoding="utf-8")
    assert text.startswith("# manifest: sim.manifest.json\n")
    ds = load_dataset(out)
    assert len(ds) == 30
    assert ds.covariate_names == ("x1",)
    assert read_json(emitted)["censor_upper"] == 14.0
    man = read_json(tmp_path / "sim.manifest.json")
    assert sorted(man["outputs"]) == ["design_used.json", "sim.csv"]


def test_simulate_reruns_are_byte_identical(tmp_path, design_json):
    a = tmp_path / "a" / "sim.csv"
    b = tmp_path / "b" / "sim.csv"
    for out in (a, b):
        rc = main(["simulate", "--design", str(design_json), "--seed", "3", "--out", str(out)])
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()
    # manifests differ only in volatile fields
    ma = read_json(tmp_path / "a" / "sim.manifest.json")
    mb = read_json(tmp_path / "b" / "sim.manifest.json")
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    ma.pop("argv"), mb.pop("argv")
    assert ma == mb


def test_simulate_calibrates_when_no_upper_bound(tmp_path):
    design = dict(DESIGN, censor_target=0.25, censor_upper=None)
    dpath = tmp_path / "design.json"
    dpath.write_text(json.dumps(design), encoding="utf-8")
    emitted = tmp_path / "used.json"
    rc = main([
        "simulate", "--design", str(dpath), "--out", str(tmp_path / "sim.csv"),
        "--emit-design", str(emitted),
    ])
    assert rc == 0
    assert read_json(emitted)["censor_upper"] > 0


# -- bootstrap ----------------------------------------------------------------


def test_bootstrap_artifact(tmp_path, data_csv):
    out = tmp_path / "boot.json"
    rc = main([
        "bootstrap", "--data", str(data_csv), "--out", str(out),
        "--optimizer", "bfgs", "--init", "0.5,1.0,0.0",
        "--boot", "50", "--level", "0.9", "--seed", "5",
    ])
    assert rc == 0
    doc = read_json(out)
    assert doc["command"] == "bootstrap"
    boot = doc["bootstrap"]
    assert boot["n_boot"] == 50 and boot["level"] == 0.9 and boot["seed"] == 5
    assert set(boot["ci"]) == {"alpha", "tau", "x1"}
    assert boot["ci_scale"] == {"alpha": "exp", "tau": "natural", "x1": "exp"}
    assert len(boot["draws"]) == 50 - boot["n_failed"]
    lo, hi = boot["order_stats"]
    assert 1 <= lo <= hi <= len(boot["draws"])


# -- permute ------------------------------------------------------------------


def test_permute_artifact(tmp_path, data_csv):
    out = tmp_path / "perm.json"
    rc = main([
        "permute", "--data", str(data_csv), "--out", str(out),
        "--optimizer", "bfgs", "--init", "0.5,1.0", "--perms", "19", "--seed", "2",
    ])
    assert rc == 0
    doc = read_json(out)
    assert doc["command"] == "permute"
    n_ok = doc["n_perm"] - doc["n_failed"]
    assert len(doc["draws"]) == n_ok
    for p in (doc["p_alpha"], doc["p_tau"]):
        assert 1.0 / (n_ok + 1) <= p <= 1.0
    assert doc["tau_rule"] == "abs deviation from the permutation median"
    assert set(doc["observed"]) == {"alpha", "tau", "loglik", "bandwidth"}


# -- characterize -------------------------------------------------------------


@pytest.fixture
def fit_doc(tmp_path):
    path = tmp_path / "fitted.json"
    path.write_text(
        json.dumps({"params": {"alpha": 0.8, "tau": 1.4, "beta": {"x1": 0.5}}}),
        encoding="utf-8",
    )
    return path


def test_characterize_outputs(tmp_path, data_csv, fit_doc):
    out_dir = tmp_path / "char"
    rc = main([
        "characterize", "--data", str(data_csv), "--fit", str(fit_doc),
        "--min-leaf", "4", "--max-depth", "2", "--cp", "0.01",
        "--out-dir", str(out_dir),
    ])
    assert rc == 0
    tree = read_json(out_dir / "tree.json")
    assert tree["command"] == "characterize"
    assert tree["config"] == {"min_leaf": 4, "max_depth": 2, "cp": 0.01}
    assert tree["n"] == 24

    phat = (out_dir / "phat.csv").read_text(encoding="utf-8").splitlines()
    assert phat[0] == "# manifest: tree.manifest.json"
    assert phat[1] == "subject,p_hat,threshold,tail_defective"
    assert len(phat) == 2 + 24
    values = [float(line.split(",")[1]) for line in phat[2:]]
    assert all(0.0 <= v <= 1.0 for v in values)

    km = (out_dir / "km.csv").read_text(encoding="utf-8").splitlines()
    assert km[1] == "time,at_risk,events,censored,survival"
    assert int(km[2].split(",")[1]) == 24  # full cohort at risk at the first value

    leaves = (out_dir / "leaves.csv").read_text(encoding="utf-8").splitlines()
    assert leaves[1] == "label,n,events,mean,min,q1,median,q3,max"
    assert leaves[2].startswith("A,")

    man = read_json(out_dir / "tree.manifest.json")
    assert sorted(man["outputs"]) == ["km.csv", "leaves.csv", "phat.csv", "tree.json"]


def test_characterize_rejects_nonpositive_tau(tmp_path, data_csv, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"params": {"alpha": 0.8, "tau": 0.0, "beta": {"x1": 0.5}}}))
    rc = main([
        "characterize", "--data", str(data_csv), "--fit", str(bad),
        "--out-dir", str(tmp_path / "char"),
    ])
    assert rc == 2
    assert "error: data:" in capsys.readouterr().err


def test_characterize_rejects_missing_params(tmp_path, data_csv, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"params": {"alpha": 0.8}}))
    rc = main([
        "characterize", "--data", str(data_csv), "--fit", str(bad),
        "--out-dir", str(tmp_path / "char"),
    ])
    assert rc == 2
    assert "missing parameter fields" in capsys.readouterr().err


# -- replicate ----------------------------------------------------------------


def test_replicate_artifacts(tmp_path, design_json):
    out = tmp_path / "study.json"
    rc = main([
        "replicate", "--design", str(design_json), "--reps", "3",
        "--init", "1.0,1.5,0.5", "--optimizer", "bfgs", "--seed", "4",
        "--out", str(out),
    ])
    assert rc == 0
    doc = read_json(out)
    assert doc["command"] == "replicate"
    assert doc["param_names"] == ["alpha", "tau", "beta1"]
    assert doc["truth"] == [1.0, 1.5, 0.5]
    assert doc["n_reps"] == 3

    csv_lines = (tmp_path / "study.csv").read_text(encoding="utf-8").splitlines()
    assert csv_lines[0] == "# manifest: study.manifest.json"
    assert csv_lines[1] == "param,truth,mean,bias,sd"
    assert [ln.split(",")[0] for ln in csv_lines[2:]] == ["alpha", "tau", "beta1"]

    man = read_json(tmp_path / "study.manifest.json")
    assert sorted(man["outputs"]) == ["study.csv", "study.json"]


# -- error handling and exit codes -------------------------------------------


def test_usage_error_exit_code(capsys):
    rc = main(["fit", "--out", "x.json"])  # --data missing
    assert rc == 1
    assert "error: usage:" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path, capsys):
    rc = main([
        "fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.json"),
    ])
    assert rc == 2
    assert "error: data: input file not found" in capsys.readouterr().err


def test_bad_init_arity_exit_code(tmp_path, data_csv, capsys):
    rc = main([
        "fit", "--data", str(data_csv), "--out", str(tmp_path / "o.json"),
        "--init", "1.0,1.0",
    ])
    assert rc == 2
    assert "--init needs 3 values" in capsys.readouterr().err


def test_numerical_error_exit_code(tmp_path, data_csv, capsys, monkeypatch):
    def unstable(*args, **kwargs):
        raise ResamplingError("bootstrap unstable: 9/50 refits failed")

    monkeypatch.setattr(cli, "bootstrap_ci", unstable)
    rc = main([
        "bootstrap", "--data", str(data_csv), "--out", str(tmp_path / "b.json"),
        "--init", "0.5,1.0,0.0",
    ])
    assert rc == 3
    assert "error: numerical:" in capsys.readouterr().err


def test_console_script_version():
    out = subprocess.run(
        [sys.executable, "-m", "paft.cli", "--version"],
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "paft 0.1.0"

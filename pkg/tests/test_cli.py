import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from sndoe import cli
from sndoe.data import Dataset, export_trajectories
from sndoe.field import StableField
from sndoe.geometry import Euclidean
from sndoe.solve import SolveConfig, Trajectory, solve
from sndoe.train import NonFiniteError

TINY = {
    "h_hidden": [16, 16],
    "H_hidden": [16],
    "feature_dim": 4,
    "C_hidden": [16, 16],
    "tangent_epochs": 2,
    "ms_epochs": 2,
    "lyap_epochs": 2,
    "finetune_epochs": 1,
    "direct_epochs": 2,
    "shot_min": 2,
    "shot_max": 5,
    "downsample": 10,
}


def _manifest(path):
    doc = json.loads((path / "manifest.json").read_text())
    assert doc["config_hash"] == hashlib.sha256((path / "config.json").read_bytes()).hexdigest()
    for rel in doc["outputs"]:
        assert (path / rel).exists(), rel
    return doc


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert cli.main(["gen-dataset", "--shape", "s-curve", "--manifold", "s3", "--out", str(out), "--n-samples", "201"]) == 0
    return out


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory, dataset_dir, config_path):
    out = tmp_path_factory.mktemp("model")
    assert cli.main(["train", "--dataset", str(dataset_dir), "--config", str(config_path), "--out", str(out)]) == 0
    return out


# -- gen-dataset -------------------------------------------------------------------------------


def test_gen_dataset_outputs(dataset_dir):
    doc = _manifest(dataset_dir)
    assert doc["command"] == "gen-dataset" and doc["seed"] == 0
    assert {"dataset.json", "demo_0.csv", "demo_3.json", "preview.svg", "config.json"} <= set(doc["outputs"])
    assert (dataset_dir / "preview.svg").read_text().startswith("<svg")


def test_gen_dataset_reproducible(dataset_dir, tmp_path):
    cli.main(["gen-dataset", "--shape", "s-curve", "--manifold", "s3", "--out", str(tmp_path), "--n-samples", "201"])
    for f in dataset_dir.iterdir():
        if f.name != "manifest.json":
            assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name
    a, b = _manifest(dataset_dir), _manifest(tmp_path)
    for k in ("command", "config_hash", "seed", "outputs", "version"):
        assert a[k] == b[k]


@pytest.mark.parametrize(
    "argv",
    [
        ["gen-dataset", "--shape", "circle", "--manifold", "s3"],
        ["gen-dataset", "--shape", "s-curve", "--manifold", "torus"],
        ["gen-dataset", "--shape", "s-curve"],
    ],
)
def test_gen_dataset_usage_errors(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2


# -- train ---------------------------------------------------------------------------------------


def test_train_outputs(model_dir):
    doc = _manifest(model_dir)
    assert {"model.json", "metrics.csv", "summary.json"} <= set(doc["outputs"])
    sf = StableField.load(model_dir / "model.json")
    assert np.all(sf.stable_field(sf.x_e) == 0.0)
    rows = list(csv.DictReader(open(model_dir / "metrics.csv")))
    assert {r["stage"] for r in rows} == {"tangent", "multishoot_g", "lyapunov", "finetune"}
    summary = json.loads((model_dir / "summary.json").read_text())
    assert set(summary["stage_seconds"]) == {"stage1", "stage2", "stage3"}


def test_train_reproducible(model_dir, dataset_dir, config_path, tmp_path):
    assert cli.main(["train", "--dataset", str(dataset_dir), "--config", str(config_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.json").read_bytes() == (model_dir / "model.json").read_bytes()
    assert _manifest(tmp_path)["config_hash"] != ""
    # losses agree; wall-time columns are measurements, like timestamps
    strip = lambda p: [(r["stage"], r["epoch"], r["loss"]) for r in csv.DictReader(open(p))]  # noqa: E731
    assert strip(tmp_path / "metrics.csv") == strip(model_dir / "metrics.csv")


def test_train_validation_errors(dataset_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 1.0}))
    assert cli.main(["train", "--dataset", str(dataset_dir), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("{not json")
    assert cli.main(["train", "--dataset", str(dataset_dir), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["train", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_train_numerical_abort(dataset_dir, config_path, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteError("nan in loss", "tangent", 4, [1, 3])

    monkeypatch.setattr(cli, "train", boom)
    code = cli.main(["train", "--dataset", str(dataset_dir), "--config", str(config_path), "--out", str(tmp_path)])
    assert code == 3
    dump = json.loads((tmp_path / "nonfinite.json").read_text())
    assert dump["stage"] == "tangent" and dump["epoch"] == 4 and dump["batch"] == [1, 3]
    _manifest(tmp_path)


# -- rollout ---------------------------------------------------------------------------------------


def test_rollout_from_demo_and_perturbed(model_dir, dataset_dir, tmp_path, capsys):
    model = str(model_dir / "model.json")
    out = tmp_path / "r" / "traj.csv"
    base = ["rollout", "--model", model, "--dataset", str(dataset_dir), "--steps", "20", "--dt", "0.01", "--out", str(out)]
    assert cli.main(base + ["--start", "demo:1"]) == 0
    text = capsys.readouterr().out
    assert text.count("V=") == 21 and "final distance to x_e" in text
    assert out.read_text().splitlines()[0] == "t,c0,c1,c2,c3"
    _manifest(out.parent)
    assert cli.main(base + ["--start", "perturb:1:0.2", "--solver", "dc-rk4"]) == 0
    for start in ["demo:9", "perturb:x", "1,0,0", "1,0,0,0.01", "a,b,c,d"]:
        assert cli.main(base + ["--start", start]) == 2
    assert cli.main(base + ["--start", "demo:0", "--solver", "rk4"]) == 2


def test_rollout_explicit_start(model_dir, tmp_path):
    q = np.array([0.5, 0.5, 0.5, 0.5 + 1e-8])
    start = ",".join(repr(float(v)) for v in q)
    argv = ["rollout", "--model", str(model_dir / "model.json"), "--start", start, "--steps", "5", "--out", str(tmp_path / "t.csv")]
    assert cli.main(argv) == 0
    first = (tmp_path / "t.csv").read_bytes()
    assert cli.main(argv) == 0
    assert (tmp_path / "t.csv").read_bytes() == first
    assert cli.main(["rollout", "--model", str(tmp_path / "missing.json"), "--start", start, "--out", str(tmp_path / "x.csv")]) == 2


# -- evaluate --------------------------------------------------------------------------------------


def test_evaluate_perfect_replay_is_zero(tmp_path):
    m = Euclidean(2)
    sf = StableField.create(m, np.zeros(2), seed=1, h_hidden=(8,), H_hidden=(8,), feature_dim=2, C_hidden=(8,))
    sf.save(tmp_path / "model.json")
    pts = solve(m, sf.bind().f, np.array([1.0, -0.5]), SolveConfig("exp", "euler", 50, 0.5))
    ds = Dataset(m, [Trajectory(m, pts, 0.01)], pts[-1], "replay")
    export_trajectories(ds, tmp_path / "ds")
    assert cli.main(["evaluate", "--model", str(tmp_path / "model.json"), "--dataset", str(tmp_path / "ds"), "--out", str(tmp_path / "ev")]) == 0
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["rmse_mean"] == 0.0
    assert (tmp_path / "ev" / "overlay.svg").exists()
    _manifest(tmp_path / "ev")


def test_evaluate_annotations_and_mismatch(model_dir, dataset_dir, tmp_path):
    out = tmp_path / "ev"
    assert cli.main(["evaluate", "--model", str(model_dir / "model.json"), "--dataset", str(dataset_dir), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "rmse.csv")))
    assert [r["demo"] for r in rows] == ["0", "1", "2", "3", "mean"]
    m = Euclidean(4)
    pts = np.tile(np.ones(4), (3, 1))
    export_trajectories(Dataset(m, [Trajectory(m, pts, 0.1)], np.ones(4), "flat"), tmp_path / "flat")
    assert cli.main(["evaluate", "--model", str(model_dir / "model.json"), "--dataset", str(tmp_path / "flat"), "--out", str(out)]) == 2


def test_evaluate_reports_published_reference(tmp_path):
    out = tmp_path / "ds"
    assert cli.main(["gen-dataset", "--shape", "w-curve", "--manifold", "s3", "--out", str(out), "--n-samples", "101"]) == 0
    sf = StableField.create(cli.UnitQuaternion(), np.array([1.0, 0, 0, 0]), h_hidden=(8,), H_hidden=(8,), feature_dim=2, C_hidden=(8,))
    sf.save(tmp_path / "m.json")
    assert cli.main(["evaluate", "--model", str(tmp_path / "m.json"), "--dataset", str(out), "--out", str(tmp_path / "ev")]) == 0
    summary = json.loads((tmp_path / "ev" / "summary.json").read_text())
    assert summary["published_reference_rmse"] == cli.REFERENCE_RMSE[("s3", "w-curve")]["exp"]


# -- bench, defect, timing -----------------------------------------------------------------------------


def test_solver_bench_orders(tmp_path):
    assert cli.main(["solver-bench", "--manifold", "s3", "--field", "pull", "--horizon", "1.0", "--out", str(tmp_path)]) == 0
    orders = {(r["method"], r["stepper"]): float(r["order"]) for r in csv.DictReader(open(tmp_path / "orders.csv"))}
    for method in ("exp", "dc"):
        assert abs(orders[(method, "euler")] - 1) <= 0.25 and abs(orders[(method, "rk4")] - 4) <= 0.25
    assert len(list(csv.DictReader(open(tmp_path / "bench.csv")))) == 18
    _manifest(tmp_path)


@pytest.mark.parametrize("manifold,field", [("s3", "rotation"), ("euclidean:3", "linear:2")])
def test_solver_bench_other_fields(manifold, field, tmp_path):
    assert cli.main(["solver-bench", "--manifold", manifold, "--field", field, "--ns", "20,40", "--out", str(tmp_path)]) == 0


def test_solver_bench_rejects_unknown_field(tmp_path):
    assert cli.main(["solver-bench", "--manifold", "s3", "--field", "linear", "--out", str(tmp_path)]) == 2
    assert cli.main(["solver-bench", "--manifold", "s3", "--field", "pull:1,2", "--out", str(tmp_path)]) == 2


def test_defect_demo_report(tmp_path):
    assert cli.main(["defect-demo", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["uncorrected"]["f_x_e_norm"] > 0 and report["uncorrected"]["max_distance_from_x_e"] > 0.01
    assert report["corrected"]["f_x_e_norm"] == 0.0 and report["corrected"]["stays_bitwise_at_x_e"]
    assert (tmp_path / "defect.svg").exists()


def test_timing_csv(dataset_dir, config_path, tmp_path):
    assert cli.main(["timing", "--dataset", str(dataset_dir), "--config", str(config_path), "--reps", "3", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "timing.csv")))
    assert [r["objective"] for r in rows] == ["stage1", "stage3"]
    assert all(int(r["reps"]) == 3 and float(r["median_seconds"]) > 0 for r in rows)


def test_thread_env_validated(tmp_path, monkeypatch):
    monkeypatch.setenv("SNDOE_THREADS", "zero")
    assert cli.main(["defect-demo", "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("SNDOE_THREADS", "1")
    assert cli.main(["defect-demo", "--out", str(tmp_path), "--steps", "5"]) == 0


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sndoe.cli", "gen-dataset", "--shape", "nope", "--manifold", "s3", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 2 and "unknown shape" in res.stderr
    res = subprocess.run([sys.executable, "-m", "sndoe.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "defect-demo" in res.stdout

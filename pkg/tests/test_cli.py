import csv
import json
import shutil

import numpy as np
import pytest

from spiraldeblur.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, THREADS_ENV, main, resolve_threads
from spiraldeblur.io import read_cimg, read_kspc, read_model
from spiraldeblur.transform import nufft_adjoint

TINY = {
    "schema_version": 1,
    "trajectory": {"matrix": 32},
    "phantom": {"n_frames": 3},
    "dataset": {"n_subjects": 3, "seed": 5},
    "cnn": {"epochs": 2, "batch_size": 4, "patch": 16},
    "ir": {"max_iters": 5},
    "bench": {"n_frames": 4, "warmup": 1},
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    c = ["--config", cfg, "--threads", 1]
    assert run("gen-data", *c, "--out", root / "ds") == EXIT_OK
    assert run("train", *c, "--data", root / "ds", "--out", root / "m.modl") == EXIT_OK
    for m in ("none", "mfi", "ir", "cnn"):
        assert run("deblur", *c, "--method", m, "--data", root / "ds", "--fieldmaps", root / "ds",
                   "--model", root / "m.modl", "--out", root / f"r_{m}") == EXIT_OK
    return root, c


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_gen_data_layout(pipeline):
    root, _ = pipeline
    man = manifest(root / "ds")
    assert man["kind"] == "dataset" and man["version"].startswith("v0.1.0")
    assert man["counts"] == {"truth_cimg": 9, "fmap": 9, "blurred_cimg": 18, "kspc": 18, "traj": 2}
    assert sorted(sum(man["splits"].values(), [])) == [0, 1, 2]
    assert len(man["augmentation"]) == 9
    assert len(list((root / "ds").glob("s*/*_truth.cimg"))) == 9
    assert len(list((root / "ds").glob("s*/*_long.cimg"))) == 9
    assert len(list((root / "ds").glob("s*/*.fmap"))) == 9
    assert man["config"]["trajectory"]["matrix"] == 32


def test_gen_data_unwritable_target(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("gen-data", "--set", "dataset.n_subjects=3", "--out", blocker / "sub") == EXIT_DATA
    assert not (blocker.parent / "sub").exists()


def test_usage_errors(tmp_path, capsys):
    assert run("gen-data", "--set", "nosuch.key=1", "--out", tmp_path) == EXIT_USAGE
    assert run("gen-data", "--set", "badformat", "--out", tmp_path) == EXIT_USAGE
    (tmp_path / "bad.json").write_text('{"ir": {"bogus": 1}}')
    assert run("gen-data", "--config", tmp_path / "bad.json", "--out", tmp_path) == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
    assert not (tmp_path / "manifest.json").exists()
    assert run("deblur", "--method", "ir", "--data", tmp_path, "--out", tmp_path / "o") == EXIT_USAGE
    assert "--fieldmaps" in capsys.readouterr().err


def test_version_flag(capsys):
    assert run("--version") == EXIT_OK
    assert capsys.readouterr().out.startswith("v0.1.0")


def test_threads_env_overrides_flag(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads(1) == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(Exception):
        resolve_threads(None)
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_threads(2) == 2


def test_train_outputs(pipeline):
    root, _ = pipeline
    model = read_model(root / "m.modl")
    assert model.n_params == 61730
    rows = list(csv.DictReader(open(root / "m.csv")))
    assert [r["epoch"] for r in rows] == ["0", "1", "2"]
    assert min(float(r["val_loss"]) for r in rows[1:]) < float(rows[0]["val_loss"])
    side = json.loads((root / "m.json").read_text())
    assert side["dataset_config_hash"] == manifest(root / "ds")["config_hash"]


def test_train_empty_split(pipeline, tmp_path):
    root, c = pipeline
    ds = tmp_path / "ds"
    shutil.copytree(root / "ds", ds)
    man = manifest(ds)
    man["splits"]["train"] = []
    (ds / "manifest.json").write_text(json.dumps(man))
    assert run("train", *c, "--data", ds, "--out", tmp_path / "m.modl") == EXIT_DATA
    assert run("train", *c, "--data", tmp_path / "nowhere", "--out", tmp_path / "m.modl") == EXIT_DATA


def test_deblur_none_is_gridding(pipeline):
    from spiraldeblur.cli import DatasetDir
    root, _ = pipeline
    ds = DatasetDir(root / "ds")
    proto = ds.protocol("long")
    man = manifest(root / "r_none")
    assert man["method"] == "none" and man["protocol"] == "long"
    s, f = ds.frames("test")[0]
    out = read_cimg(root / "r_none" / man["frames"][0]["file"])
    expect = nufft_adjoint(read_kspc(ds.path(s, f, "long.kspc")), proto.plan, proto.density)
    assert out.tobytes() == expect.astype(np.complex64).tobytes()
    assert out.tobytes() == read_cimg(ds.path(s, f, "long.cimg")).tobytes()
    lat = list(csv.DictReader(open(root / "r_none" / "latency.csv")))
    assert len(lat) == 3 and all(float(r["latency_ms"]) > 0 for r in lat)


def test_deblur_manifests_record_method_details(pipeline):
    root, _ = pipeline
    assert manifest(root / "r_mfi")["mfi"]["fit_residual"] < 0.01
    assert all(1 <= fr["iterations"] <= 5 for fr in manifest(root / "r_ir")["frames"])
    assert len(manifest(root / "r_cnn")["model_sha256"]) == 64


def test_evaluate_tables_and_profiles(pipeline, capsys):
    root, c = pipeline
    res = [root / f"r_{m}" for m in ("none", "mfi", "ir", "cnn")]
    ev = root / "ev"
    assert run("evaluate", *c, "--truth", root / "ds", "--results", *res, "--out", ev,
               "--profile-subject", 2, "--profile-axis", "col") == EXIT_OK
    rows = list(csv.DictReader(open(ev / "metrics.csv")))
    assert len(rows) == 12
    assert set(rows[0]) == {"subject", "frame", "t_read_ms", "method", "psnr_db", "ssim", "hfen"}
    summary = {r["method"]: r for r in csv.DictReader(open(ev / "summary.csv"))}
    for m in ("none", "mfi", "ir", "cnn"):
        vals = [float(r["psnr_db"]) for r in rows if r["method"] == m]
        assert float(summary[m]["psnr_mean"]) == pytest.approx(np.mean(vals), abs=1e-12)
        assert summary[m]["n"] == "3"
    assert float(summary["ir"]["psnr_mean"]) > float(summary["none"]["psnr_mean"])
    prof = np.loadtxt(ev / "profile_s002_truth.csv", delimiter=",")
    assert prof.shape == (3, 32)
    assert np.loadtxt(ev / "profile_s002_ir_long.csv", delimiter=",").shape == (3, 32)
    assert "PSNR" in capsys.readouterr().out


def test_evaluate_truth_against_itself(pipeline, tmp_path):
    root, c = pipeline
    src = manifest(root / "r_none")
    frames = []
    for fr in src["frames"]:
        name = f"s{fr['subject']:03d}/f{fr['frame']:04d}_truth.cimg"
        (tmp_path / "self" / name).parent.mkdir(parents=True, exist_ok=True)
        shutil.copy(root / "ds" / name, tmp_path / "self" / name)
        frames.append({**fr, "file": name})
    (tmp_path / "self" / "manifest.json").write_text(json.dumps({**src, "method": "truth",
                                                                 "frames": frames}))
    assert run("evaluate", *c, "--truth", root / "ds", "--results", tmp_path / "self",
               "--out", tmp_path / "ev") == EXIT_OK
    for r in csv.DictReader(open(tmp_path / "ev" / "metrics.csv")):
        assert float(r["psnr_db"]) == 200 and float(r["ssim"]) == 1 and float(r["hfen"]) == 0


def test_evaluate_refuses_mismatched_trajectory(pipeline, tmp_path):
    root, c = pipeline
    other = tmp_path / "r"
    shutil.copytree(root / "r_none", other)
    man = manifest(other)
    man["trajectory_hash"] = "0" * 64
    (other / "manifest.json").write_text(json.dumps(man))
    args = ["evaluate", *c, "--truth", root / "ds", "--results", other, "--out", tmp_path / "ev"]
    assert run(*args) == EXIT_DATA
    assert run(*args, "--force") == EXIT_OK


def test_evaluate_missing_frame(pipeline, tmp_path):
    root, c = pipeline
    broken = tmp_path / "r"
    shutil.copytree(root / "r_none", broken)
    (broken / manifest(broken)["frames"][0]["file"]).unlink()
    assert run("evaluate", *c, "--truth", root / "ds", "--results", broken,
               "--out", tmp_path / "ev") == EXIT_DATA


def test_bench_report(pipeline, capsys):
    root, c = pipeline
    out = root / "bench.json"
    assert run("bench", *c, "--model", root / "m.modl", "--frames", 6, "--out", out) == EXIT_OK
    rep = json.loads(out.read_text())
    assert set(rep) == {"mean_ms", "std_ms", "n"} and rep["n"] == 6 and rep["mean_ms"] > 0
    assert run("bench", *c, "--method", "ir", "--data", root / "ds", "--frames", 2) == EXIT_OK
    assert run("bench", *c, "--method", "ir") == EXIT_USAGE
    assert run("bench", *c) == EXIT_USAGE

import json
import struct

import numpy as np
import pytest

from spiraldeblur.cnn import init_model
from spiraldeblur.io import (FormatError, RunConfig, config_hash, load_config, read_cimg,
                             read_fmap, read_kspc, read_model, read_traj, write_cimg,
                             write_fmap, write_kspc, write_model, write_traj)
from spiraldeblur.trajectory import LONG_READOUT, SHORT_READOUT, make_spiral


def test_cimg_round_trip_and_layout(tmp_path, rng):
    img = (rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))).astype(np.complex64)
    p = tmp_path / "a.cimg"
    write_cimg(p, img)
    raw = p.read_bytes()
    assert raw[:4] == b"CIMG" and struct.unpack_from("<III", raw, 4) == (1, 5, 7)
    assert len(raw) == 16 + 8 * 5 * 7
    assert struct.unpack_from("<ff", raw, 16) == (img[0, 0].real, img[0, 0].imag)
    back = read_cimg(p)
    assert back.dtype == np.complex64 and back.tobytes() == img.tobytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_cimg_real_input(tmp_path):
    write_cimg(tmp_path / "r.cimg", np.ones((3, 3)))
    assert np.array_equal(read_cimg(tmp_path / "r.cimg"), np.ones((3, 3), np.complex64))


def test_fmap_round_trip(tmp_path, rng):
    f = (rng.standard_normal((6, 4)) * 100).astype(np.float32)
    p = tmp_path / "f.fmap"
    write_fmap(p, f)
    assert len(p.read_bytes()) == 16 + 4 * 24
    assert read_fmap(p).tobytes() == f.tobytes()
    with pytest.raises(ValueError):
        write_fmap(p, f + 1j)
    with pytest.raises(ValueError):
        write_fmap(p, f.ravel())


def test_kspc_round_trip(tmp_path, rng):
    d = rng.standard_normal(31) + 1j * rng.standard_normal(31)
    write_kspc(tmp_path / "k.kspc", d)
    assert np.array_equal(read_kspc(tmp_path / "k.kspc"), d)


@pytest.mark.parametrize("t_read,n_int", [(SHORT_READOUT, 13), (LONG_READOUT, 5)])
def test_traj_round_trip(tmp_path, t_read, n_int):
    traj = make_spiral(84, t_read, n_interleaves=n_int)
    p = tmp_path / "t.traj"
    write_traj(p, traj)
    raw = p.read_bytes()
    assert raw[:4] == b"TRAJ"
    assert len(raw) == 8 + 24 + 16 * traj.n_samples
    back = read_traj(p)
    assert back.matrix == 84
    assert np.array_equal(back.kx, traj.kx) and np.array_equal(back.ky, traj.ky)
    assert np.array_equal(back.t, traj.t)
    assert (back.n_interleaves, back.readout_duration, back.dwell_time) == (
        traj.n_interleaves, traj.readout_duration, traj.dwell_time)


def test_model_round_trip(tmp_path):
    m = init_model(4)
    m.biases[1][:] = np.linspace(-1, 1, 32)
    p = tmp_path / "m.modl"
    write_model(p, m)
    raw = p.read_bytes()
    assert raw[:4] == b"SDBM" and struct.unpack_from("<II", raw, 4) == (1, 3)
    assert struct.unpack_from("<9I", raw, 12) == (2, 64, 9, 64, 32, 5, 32, 2, 1)
    assert len(raw) == 12 + 36 + 4 * 61730
    back = read_model(p)
    assert back.specs == m.specs
    for a, b in zip(back.params, m.params):
        assert np.array_equal(a, b.astype(np.float32).astype(np.float64))
    write_model(tmp_path / "m2.modl", back)
    assert (tmp_path / "m2.modl").read_bytes() == raw


def test_format_errors(tmp_path):
    p = tmp_path / "x.cimg"
    write_cimg(p, np.zeros((2, 2)))
    raw = p.read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "bad_version").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    (tmp_path / "short").write_bytes(raw[:-1])
    (tmp_path / "tiny").write_bytes(b"CI")
    for name in ("bad_magic", "bad_version", "short", "tiny"):
        with pytest.raises(FormatError):
            read_cimg(tmp_path / name)
    with pytest.raises(FormatError):
        read_fmap(p)
    with pytest.raises(FormatError):
        read_model(p)


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    doc = json.loads(cfg.to_json())
    assert doc["schema_version"] == 1
    assert RunConfig.from_dict(doc) == cfg
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert load_config(p) == cfg
    assert load_config() == cfg


def test_config_missing_keys_take_defaults():
    cfg = RunConfig.from_dict({"ir": {"max_iters": 5}})
    assert cfg.ir.max_iters == 5
    assert cfg.ir.tol == RunConfig().ir.tol and cfg.cnn == RunConfig().cnn


def test_config_rejects_unknown(tmp_path):
    with pytest.raises(ValueError, match="sections"):
        RunConfig.from_dict({"bogus": {}})
    with pytest.raises(ValueError, match="keys"):
        RunConfig.from_dict({"ir": {"bogus": 1}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"schema_version": 2})
    with pytest.raises(ValueError):
        RunConfig.from_dict([])
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_overrides_and_hash():
    cfg = RunConfig()
    over = cfg.with_overrides({"cnn.epochs": 3, "dataset.seed": 9})
    assert over.cnn.epochs == 3 and over.dataset.seed == 9
    assert config_hash(cfg) != config_hash(over)
    assert config_hash(cfg, "trajectory") == config_hash(over, "trajectory")
    assert config_hash(cfg) == config_hash(RunConfig.from_dict(json.loads(cfg.to_json())))
    with pytest.raises(ValueError):
        cfg.with_overrides({"nosection": 1})
    with pytest.raises(ValueError):
        cfg.with_overrides({"cnn.nokey": 1})

"""Binary artifact formats and the JSON run configuration.

All binary formats are little-endian with a 4-byte magic and a ``u32``
version. Image payloads are float32, so writing an array and reading it
back is bit-exact only for values already representable in float32.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import CnnModel, ConvSpec
from .trajectory import SpiralTrajectory

__all__ = [
    "FormatError",
    "write_cimg",
    "read_cimg",
    "write_fmap",
    "read_fmap",
    "write_kspc",
    "read_kspc",
    "write_traj",
    "read_traj",
    "write_model",
    "read_model",
    "atomic_write",
    "RunConfig",
    "TrajectoryConfig",
    "PhantomConfig",
    "AugmentConfig",
    "DatasetConfig",
    "MfiConfig",
    "IrConfig",
    "CnnConfig",
    "BenchConfig",
    "SCHEMA_VERSION",
    "load_config",
    "config_hash",
]

VERSION = 1


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def atomic_write(path, payload: bytes):
    """Write ``payload`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _header(magic: bytes, *fields) -> bytes:
    return magic + struct.pack("<I", VERSION) + b"".join(fields)


def _open(path, magic: bytes, fmt: str):
    raw = Path(path).read_bytes()
    head = 8 + struct.calcsize(fmt)
    if len(raw) < head or raw[:4] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported {magic.decode()} version {version}")
    return struct.unpack_from(fmt, raw, 8), memoryview(raw)[head:]


def _payload(path, body, dtype, count: int) -> np.ndarray:
    dtype = np.dtype(dtype)
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(body, dtype=dtype).copy()


def _image_2d(img, name):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {img.shape}")
    return img


def write_cimg(path, img):
    """Complex image as interleaved float32 ``(re, im)``, row-major."""
    img = _image_2d(img, "image")
    h, w = img.shape
    buf = np.empty((h, w, 2), dtype="<f4")
    buf[..., 0] = img.real
    buf[..., 1] = img.imag if np.iscomplexobj(img) else 0
    atomic_write(path, _header(b"CIMG", struct.pack("<II", h, w)) + buf.tobytes())


def read_cimg(path) -> np.ndarray:
    (h, w), body = _open(path, b"CIMG", "<II")
    p = _payload(path, body, "<f4", 2 * h * w).reshape(h, w, 2)
    out = np.empty((h, w), dtype=np.complex64)
    out.real, out.imag = p[..., 0], p[..., 1]
    return out


def write_fmap(path, fmap):
    """Real field map (Hz) as float32, row-major."""
    fmap = _image_2d(fmap, "field map")
    if np.iscomplexobj(fmap):
        raise ValueError("field map must be real")
    h, w = fmap.shape
    atomic_write(path, _header(b"FMAP", struct.pack("<II", h, w)) + fmap.astype("<f4").tobytes())


def read_fmap(path) -> np.ndarray:
    (h, w), body = _open(path, b"FMAP", "<II")
    return _payload(path, body, "<f4", h * w).reshape(h, w).astype(np.float32)


def write_kspc(path, data):
    """Complex k-space samples as interleaved float64 ``(re, im)``."""
    data = np.asarray(data, dtype=np.complex128).ravel()
    buf = np.empty((data.size, 2), dtype="<f8")
    buf[:, 0], buf[:, 1] = data.real, data.imag
    atomic_write(path, _header(b"KSPC", struct.pack("<I", data.size)) + buf.tobytes())


def read_kspc(path) -> np.ndarray:
    (n,), body = _open(path, b"KSPC", "<I")
    p = _payload(path, body, "<f8", 2 * n).reshape(n, 2)
    return p[:, 0] + 1j * p[:, 1]


def write_traj(path, traj: SpiralTrajectory):
    head = struct.pack("<IIdd", traj.n_interleaves, traj.samples_per_interleaf,
                       traj.dwell_time, traj.readout_duration)
    k = np.stack([traj.kx, traj.ky], axis=1).astype("<f8")
    atomic_write(path, _header(b"TRAJ", head) + k.tobytes())


def read_traj(path, matrix: int | None = None, name: str = "") -> SpiralTrajectory:
    """Read a trajectory; sample times are ``j * dwell`` within each interleaf.

    The format does not store the image matrix; by default it is taken as
    ``ceil(2 * max|k|)``, which recovers the matrix of spirals that end one
    sample short of the Nyquist radius.
    """
    (n_int, spi, dwell, t_read), body = _open(path, b"TRAJ", "<IIdd")
    k = _payload(path, body, "<f8", 2 * n_int * spi).reshape(-1, 2)
    if matrix is None:
        matrix = max(8, math.ceil(2 * np.max(np.abs(k), initial=0.0) - 1e-9))
    t = np.tile(np.arange(spi) * dwell, n_int)
    return SpiralTrajectory(k[:, 0], k[:, 1], t, n_int, t_read, dwell, matrix, name)


def write_model(path, model: CnnModel):
    """``SDBM`` checkpoint: layer triples, then each layer's weights and bias as float32."""
    head = struct.pack("<I", len(model.specs)) + b"".join(
        struct.pack("<III", s.in_channels, s.out_channels, s.kernel) for s in model.specs)
    body = b"".join(np.asarray(a, dtype="<f4").tobytes()
                    for w, b in zip(model.weights, model.biases) for a in (w, b))
    atomic_write(path, _header(b"SDBM", head) + body)


def read_model(path) -> CnnModel:
    """Read a checkpoint; every layer but the last is followed by a ReLU."""
    (n_layers,), body = _open(path, b"SDBM", "<I")
    if len(body) < 12 * n_layers:
        raise FormatError(f"{path}: truncated layer table")
    dims = np.frombuffer(body[:12 * n_layers], dtype="<u4").reshape(n_layers, 3)
    specs = tuple(ConvSpec(int(i), int(o), int(k), relu=li < n_layers - 1)
                  for li, (i, o, k) in enumerate(dims))
    sizes = [(s.out_channels, s.in_channels, s.kernel, s.kernel) for s in specs]
    flat = _payload(path, body[12 * n_layers:], "<f4",
                    sum(math.prod(sz) + sz[0] for sz in sizes))
    weights, biases, pos = [], [], 0
    for sz in sizes:
        n = math.prod(sz)
        weights.append(flat[pos:pos + n].reshape(sz).astype(np.float64))
        pos += n
        biases.append(flat[pos:pos + sz[0]].astype(np.float64))
        pos += sz[0]
    return CnnModel(specs, weights, biases)


# ---------------------------------------------------------------- config

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrajectoryConfig:
    matrix: int = 84
    dwell: float = 4e-6
    short_t_read: float = 2.52e-3
    long_t_read: float = 7.936e-3
    short_interleaves: int = 13
    long_interleaves: int = 5
    oversampling: float = 2.0
    kernel_width: int = 6
    density_iters: int = 50


@dataclass(frozen=True)
class PhantomConfig:
    n_frames: int = 40
    motion_amplitude: float = 3.0
    tissue_range: tuple[float, float] = (0.4, 1.0)
    boundary_smoothness: float = 1.0
    peak_f: float = 120.0
    fmap_smoothness: float = 3.0
    noise_std: float = 0.0


@dataclass(frozen=True)
class AugmentConfig:
    alpha_range: tuple[float, float] = (0.5, 1.5)
    beta_range: tuple[float, float] = (-50.0, 50.0)
    per_frame: bool = True


@dataclass(frozen=True)
class DatasetConfig:
    n_subjects: int = 7
    seed: int = 0


@dataclass(frozen=True)
class MfiConfig:
    # None: span the field maps being deblurred
    f_min: float | None = None
    f_max: float | None = None
    l_mfi: int | None = None


@dataclass(frozen=True)
class IrConfig:
    max_iters: int = 30
    tol: float = 1e-6
    lam: float = 0.0
    n_segments: int | None = None


@dataclass(frozen=True)
class CnnConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    lam_gdl: float = 1.0
    patience: int = 10
    patch: int = 32
    crops_per_frame: int = 1
    eval_frames: int = 64
    init_seed: int = 0
    zero_last_layer: bool = True
    train_seed: int = 0


@dataclass(frozen=True)
class BenchConfig:
    n_frames: int = 100
    warmup: int = 3


_SECTIONS = {
    "trajectory": TrajectoryConfig,
    "phantom": PhantomConfig,
    "augment": AugmentConfig,
    "dataset": DatasetConfig,
    "mfi": MfiConfig,
    "ir": IrConfig,
    "cnn": CnnConfig,
    "bench": BenchConfig,
}


@dataclass(frozen=True)
class RunConfig:
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mfi: MfiConfig = field(default_factory=MfiConfig)
    ir: IrConfig = field(default_factory=IrConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for name in _SECTIONS:
            out[name] = {k: list(v) if isinstance(v, tuple) else v
                         for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Build a config; missing keys take defaults, unknown keys raise ``ValueError``."""
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, klass in _SECTIONS.items():
            sub = doc.get(name, {})
            if not isinstance(sub, dict):
                raise ValueError(f"config section {name!r} must be an object")
            known = {f.name: f for f in dataclasses.fields(klass)}
            bad = set(sub) - set(known)
            if bad:
                raise ValueError(f"unknown keys in section {name!r}: {sorted(bad)}")
            kwargs = {}
            for key, value in sub.items():
                default = known[key].default
                kwargs[key] = tuple(value) if isinstance(default, tuple) else value
            sections[name] = klass(**kwargs)
        return cls(**sections)

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        """Apply ``{"section.key": value}`` overrides."""
        doc = self.to_dict()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in _SECTIONS or not key:
                raise ValueError(f"bad override key {dotted!r}")
            doc[section][key] = value
        return RunConfig.from_dict(doc)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


def config_hash(cfg: RunConfig, section: str | None = None) -> str:
    """SHA-256 of the canonical JSON of the config (or one section of it)."""
    doc = cfg.to_dict()
    if section is not None:
        doc = doc[section]
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()

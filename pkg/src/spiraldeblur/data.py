"""Synthetic vocal-tract-like phantoms, field maps and deblurring datasets.

Each subject is a head-shaped ellipse of soft tissue enclosing an airway
cavity. The lower wall of the cavity (the "tongue") moves smoothly from
frame to frame. Off-resonance is concentrated at the cavity's air-tissue
boundary and decays with distance from it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import erf

from .core import make_rng
from .offres import simulate_blur_exact
from .transform import build_plan, nufft_adjoint, pipe_menon_density
from .trajectory import LONG_READOUT, SHORT_READOUT, make_spiral

__all__ = [
    "PhantomParams",
    "AugmentParams",
    "DatasetRecord",
    "Dataset",
    "Protocol",
    "make_protocol",
    "default_protocols",
    "make_phantom_sequence",
    "augment_fieldmap",
    "normalize_frame",
    "denormalize_frame",
    "split_counts",
    "build_dataset",
    "cavity_mask",
    "training_pairs",
]

SPLIT_RATIO = (23, 5, 5)


@dataclass(frozen=True)
class PhantomParams:
    seed: int = 0
    matrix: int = 84
    n_frames: int = 40
    motion_amplitude: float = 3.0
    tissue_range: tuple[float, float] = (0.4, 1.0)
    boundary_smoothness: float = 1.0
    peak_f: float = 120.0
    fmap_smoothness: float = 3.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.matrix < 32 or self.n_frames < 1:
            raise ValueError(f"matrix must be >= 32 and n_frames >= 1: {self}")
        lo, hi = self.tissue_range
        if not 0 < lo < hi:
            raise ValueError(f"invalid tissue range {self.tissue_range}")


@dataclass(frozen=True)
class AugmentParams:
    alpha_range: tuple[float, float] = (0.5, 1.5)
    beta_range: tuple[float, float] = (-50.0, 50.0)
    per_frame: bool = True

    def __post_init__(self):
        for lo, hi in (self.alpha_range, self.beta_range):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid augmentation range ({lo}, {hi})")


@dataclass(frozen=True, eq=False)
class Protocol:
    """A named trajectory with its gridding plan and density weights."""

    name: str
    traj: object
    plan: object
    density: np.ndarray


def make_protocol(name: str, matrix: int = 84, t_read: float = LONG_READOUT,
                  dwell: float = 4e-6, n_interleaves: int | None = None,
                  density_iters: int = 50, oversampling: float = 2.0,
                  kernel_width: int = 6) -> Protocol:
    # the dense spiral centre converges slowly under the fixed-point
    # iteration; 50 sweeps keep the zero-field round trip of both desk
    # protocols above 40 dB
    traj = make_spiral(matrix, t_read, dwell, n_interleaves, name=name)
    plan = build_plan(traj, oversampling=oversampling, kernel_width=kernel_width)
    return Protocol(name, traj, plan, pipe_menon_density(traj, plan, iters=density_iters))


def default_protocols(matrix: int = 84) -> list[Protocol]:
    return [make_protocol("short", matrix, SHORT_READOUT), make_protocol("long", matrix, LONG_READOUT)]


@dataclass
class DatasetRecord:
    subject: int
    frame: int
    truth: np.ndarray
    fieldmap: np.ndarray
    augmented: np.ndarray
    alpha: float
    beta: float
    blurred: dict[str, np.ndarray] = field(default_factory=dict)
    kspace: dict[str, np.ndarray] = field(default_factory=dict)
    scale: dict[str, float] = field(default_factory=dict)


@dataclass
class Dataset:
    records: list[DatasetRecord]
    splits: dict[str, list[int]]
    protocols: list[Protocol]

    def split(self, name: str) -> list[DatasetRecord]:
        subjects = set(self.splits[name])
        return [r for r in self.records if r.subject in subjects]


# --- phantom -----------------------------------------------------------------

def _smooth_step(signed_distance, width):
    """0 -> 1 across a boundary, Gaussian-blurred edge of the given width (px)."""
    return 0.5 * (1 + erf(signed_distance / (math.sqrt(2) * max(width, 1e-6))))


def _ellipse_radius(theta, a, b):
    return 1.0 / np.sqrt((np.cos(theta) / a) ** 2 + (np.sin(theta) / b) ** 2)


class _Subject:
    """Per-subject random anatomy and motion parameters."""

    def __init__(self, params: PhantomParams):
        rng = make_rng(params.seed, 0xA11A)
        n = params.matrix
        self.n = n
        self.head_a = n * rng.uniform(0.26, 0.29)
        self.head_b = n * rng.uniform(0.29, 0.32)
        self.cav_c = np.array([rng.uniform(-0.04, 0.04), rng.uniform(-0.06, 0.02)]) * n
        self.cav_a = n * rng.uniform(0.13, 0.16)
        self.cav_b = n * rng.uniform(0.06, 0.085)
        self.tongue_center = rng.uniform(0.35, 0.65) * np.pi  # lower wall (image y grows down)
        self.tongue_width = rng.uniform(0.5, 0.8)
        self.period = rng.uniform(14, 26)
        self.phase0 = rng.uniform(0, 2 * np.pi)
        self.jaw_period = rng.uniform(20, 40)
        self.jaw_phase = rng.uniform(0, 2 * np.pi)
        self.wobble = rng.normal(0, 0.04, size=3)
        self.wobble_phase = rng.uniform(0, 2 * np.pi, size=3)
        # texture: a few low-frequency cosines plus small inner structures
        self.tex_k = rng.uniform(1.0, 4.0, size=(4, 2)) * rng.choice([-1, 1], size=(4, 2))
        self.tex_p = rng.uniform(0, 2 * np.pi, size=4)
        self.tex_a = rng.uniform(0.5, 1.0, size=4)
        self.blobs = [(rng.uniform(-0.22, 0.22, 2) * n, rng.uniform(2.5, 6.0, 2),
                       rng.uniform(-0.5, 0.5), rng.uniform(0, np.pi)) for _ in range(4)]
        # phase: a global term sweeping slowly through most of [-pi/2, pi/2]
        # over the sequence plus mild linear/quadratic spatial terms
        self.phase_amp = rng.uniform(0.8, 1.1)
        self.phase_period = rng.uniform(45, 65)
        self.phase_t0 = rng.uniform(0, 2 * np.pi)
        self.phase_coef = rng.normal(0, 0.4, size=5)
        # in-plane angle of B0 (image y axis) plus a small head tilt
        self.b0_angle = np.pi / 2 + rng.uniform(-0.2, 0.2)


def _frame(sub: _Subject, params: PhantomParams, t: int, xx, yy):
    n = sub.n
    sm = params.boundary_smoothness

    # head
    th = np.arctan2(yy, xx)
    rr = np.hypot(xx, yy)
    head = _smooth_step(_ellipse_radius(th, sub.head_a, sub.head_b) - rr, sm)

    # airway cavity with a moving lower wall
    cx, cy = sub.cav_c
    dx, dy = xx - cx, yy - cy
    phi = np.arctan2(dy, dx)
    rho = np.hypot(dx, dy)
    jaw = 1 + 0.08 * math.sin(2 * np.pi * t / sub.jaw_period + sub.jaw_phase)
    r_cav = _ellipse_radius(phi, sub.cav_a, sub.cav_b * jaw)
    for k, (a, p) in enumerate(zip(sub.wobble, sub.wobble_phase), start=2):
        r_cav = r_cav * (1 + a * np.cos(k * phi + p))
    tongue = params.motion_amplitude * math.sin(2 * np.pi * t / sub.period + sub.phase0)
    ang = np.angle(np.exp(1j * (phi - sub.tongue_center)))
    r_cav = r_cav - tongue * np.exp(-0.5 * (ang / sub.tongue_width) ** 2)
    r_cav = np.maximum(r_cav, 1.5)
    cavity_sd = r_cav - rho  # > 0 inside the airway
    cavity = _smooth_step(cavity_sd, sm)

    # tissue magnitude in tissue_range
    u = np.zeros_like(xx)
    for (kx, ky), p, a in zip(sub.tex_k, sub.tex_p, sub.tex_a):
        u += a * np.cos(2 * np.pi * (kx * xx + ky * yy) / n + p)
    for (bx, by), (ra, rb), amp, rot in sub.blobs:
        c, s = math.cos(rot), math.sin(rot)
        ex = ((xx - bx) * c + (yy - by) * s) / ra
        ey = (-(xx - bx) * s + (yy - by) * c) / rb
        u += 2 * amp * _smooth_step(1 - np.hypot(ex, ey), sm / max(ra, rb))
    u = np.tanh(u / 2)
    lo, hi = params.tissue_range
    tissue = lo + (hi - lo) * 0.5 * (1 + u)
    mag = head * (1 - cavity) * tissue

    # low-order polynomial phase, |phase| <= pi/2
    xn, yn = xx / n, yy / n
    poly = np.stack([xn, yn, xn * yn, xn ** 2, yn ** 2])
    phase = np.tensordot(sub.phase_coef * np.array([1, 1, 2, 2, 2]), poly, axes=1)
    phase += sub.phase_amp * math.sin(2 * np.pi * t / sub.phase_period + sub.phase_t0)
    peak = np.max(np.abs(phase))
    if peak > 0.95 * np.pi / 2:
        phase *= 0.95 * np.pi / 2 / peak
    img = mag * np.exp(1j * phase)

    # field map: smoothed air-tissue boundary band of the cavity with the
    # cos(2 theta) sign pattern of the field outside an air cylinder
    # perpendicular to B0 -- positive along B0, negative across it
    band = np.exp(-0.5 * (cavity_sd / max(sm, 0.5)) ** 2)
    band = gaussian_filter(band, params.fmap_smoothness, mode="constant")
    fmap = band * np.cos(2 * (phi - sub.b0_angle))
    fmap *= params.peak_f / np.max(np.abs(fmap))
    return img, fmap, cavity


def _grid(n):
    c = np.arange(n, dtype=np.float64) - n // 2
    return np.meshgrid(c, c, indexing="xy")


def make_phantom_sequence(params: PhantomParams = PhantomParams()):
    """Return a list of ``(image, fieldmap)`` pairs, one per frame.

    Images are complex with magnitude in ``tissue_range`` inside tissue and
    ~0 in air; field maps are in Hz with ``max|f| = peak_f``.
    """
    sub = _Subject(params)
    xx, yy = _grid(params.matrix)
    out = []
    for t in range(params.n_frames):
        img, fmap, _ = _frame(sub, params, t, xx, yy)
        if params.noise_std > 0:
            rng = make_rng(params.seed, 0x0015E, t)
            img = img + params.noise_std * (rng.standard_normal(img.shape)
                                            + 1j * rng.standard_normal(img.shape))
        out.append((img, fmap))
    return out


def cavity_mask(params: PhantomParams, frame: int) -> np.ndarray:
    """Boolean airway mask of one frame (for boundary-distance checks)."""
    sub = _Subject(params)
    xx, yy = _grid(params.matrix)
    return _frame(sub, params, frame, xx, yy)[2] > 0.5


# --- augmentation and normalization ---------------------------------------------

def augment_fieldmap(fmap, alpha: float, beta: float) -> np.ndarray:
    """``alpha * f + beta``."""
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("alpha and beta must be finite")
    return alpha * np.asarray(fmap, dtype=np.float64) + beta


def normalize_frame(img, percentile: float = 98.0):
    """Scale ``img`` so its 98th-percentile magnitude is 1; returns ``(scaled, scale)``."""
    img = np.asarray(img)
    scale = float(np.percentile(np.abs(img), percentile))
    if not scale > 0:
        raise ValueError("cannot normalize an all-zero frame")
    return img / scale, scale


def denormalize_frame(img, scale: float):
    return np.asarray(img) * scale


# --- dataset -----------------------------------------------------------------

def split_counts(n_subjects: int) -> tuple[int, int, int]:
    """Train/validation/test subject counts in the 23:5:5 ratio, at least 1 each."""
    total = sum(SPLIT_RATIO)
    n_val = max(1, round(n_subjects * SPLIT_RATIO[1] / total))
    n_test = max(1, round(n_subjects * SPLIT_RATIO[2] / total))
    n_train = n_subjects - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{n_subjects} subjects cannot populate train/val/test splits")
    return n_train, n_val, n_test


def _subject_records(subject, params, aug, protocols, seed):
    sp = PhantomParams(**{**params.__dict__, "seed": int(make_rng(seed, subject).integers(2 ** 62))})
    seq = make_phantom_sequence(sp)
    records = []
    subj_rng = make_rng(seed, subject, 0xA6)
    subj_ab = (subj_rng.uniform(*aug.alpha_range), subj_rng.uniform(*aug.beta_range))
    for t, (img, fmap) in enumerate(seq):
        if aug.per_frame:
            rng = make_rng(seed, subject, t, 0xA6)
            alpha, beta = rng.uniform(*aug.alpha_range), rng.uniform(*aug.beta_range)
        else:
            alpha, beta = subj_ab
        f_aug = augment_fieldmap(fmap, alpha, beta)
        rec = DatasetRecord(subject, t, img, fmap, f_aug, float(alpha), float(beta))
        for p in protocols:
            data = simulate_blur_exact(img, f_aug, p.traj)
            blurred = nufft_adjoint(data, p.plan, p.density)
            rec.kspace[p.name] = data
            rec.blurred[p.name] = blurred
            rec.scale[p.name] = normalize_frame(blurred)[1]
        records.append(rec)
    return records


def build_dataset(n_subjects: int = 7, params: PhantomParams = PhantomParams(),
                  aug: AugmentParams = AugmentParams(), protocols=None, seed: int = 0,
                  threads: int = 1) -> Dataset:
    """Simulate phantoms, augment field maps, blur with every protocol, split by subject.

    Subjects ``0 .. n_train-1`` form the training split, the next
    ``n_val`` the validation split and the rest the test split.
    """
    if n_subjects < 3:
        raise ValueError("at least 3 subjects are needed to populate all splits")
    n_train, n_val, _ = split_counts(n_subjects)
    if protocols is None:
        protocols = default_protocols(params.matrix)
    subjects = range(n_subjects)

    def work(s):
        return _subject_records(s, params, aug, protocols, seed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_subject = list(pool.map(work, subjects))
    else:
        per_subject = [work(s) for s in subjects]
    records = [r for recs in per_subject for r in recs]
    ids = list(subjects)
    splits = {"train": ids[:n_train], "val": ids[n_train:n_train + n_val],
              "test": ids[n_train + n_val:]}
    return Dataset(records, splits, list(protocols))


def training_pairs(records, protocol_names=None):
    """Normalized ``(inputs, targets)`` channel arrays for the CNN.

    Each (record, protocol) pair contributes the blurred frame and the truth,
    both divided by the blurred frame's normalization scale.
    """
    from .cnn import to_channels

    xs, ys = [], []
    for r in records:
        for name in protocol_names or sorted(r.blurred):
            s = r.scale[name]
            xs.append(to_channels(r.blurred[name] / s))
            ys.append(to_channels(r.truth / s))
    if not xs:
        return np.zeros((0, 2, 1, 1)), np.zeros((0, 2, 1, 1))
    return np.stack(xs), np.stack(ys)


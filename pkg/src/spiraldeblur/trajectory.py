"""Uniform-density Archimedean spiral trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpiralTrajectory",
    "make_spiral",
    "timestamps",
    "SHORT_READOUT",
    "LONG_READOUT",
    "DEFAULT_DWELL",
    "DEFAULT_INTERLEAVES",
]

SHORT_READOUT = 2.52e-3
LONG_READOUT = 7.936e-3
DEFAULT_DWELL = 4e-6
DEFAULT_INTERLEAVES = {SHORT_READOUT: 13, LONG_READOUT: 5}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpiralTrajectory:
    """k-space sample locations (cycles/FOV) with readout timestamps (s).

    Arrays are flat and interleaf-major: the samples of interleaf ``i`` are
    ``slice(i * samples_per_interleaf, (i + 1) * samples_per_interleaf)``.
    """

    kx: np.ndarray
    ky: np.ndarray
    t: np.ndarray
    n_interleaves: int
    readout_duration: float
    dwell_time: float
    matrix: int
    name: str = field(default="")

    def __post_init__(self):
        for attr in ("kx", "ky", "t"):
            object.__setattr__(self, attr, _frozen(getattr(self, attr)))
        if not (self.kx.shape == self.ky.shape == self.t.shape) or self.kx.ndim != 1:
            raise ValueError("kx, ky and t must be 1-D arrays of equal length")
        if self.n_interleaves < 1 or self.kx.size % self.n_interleaves:
            raise ValueError("sample count must be a multiple of n_interleaves")
        t = self.t.reshape(self.n_interleaves, -1)
        if np.any(t[:, 0] != 0) or np.any(np.diff(t, axis=1) <= 0):
            raise ValueError("timestamps must start at 0 and increase within each interleaf")
        kmax = np.max(np.maximum(np.abs(self.kx), np.abs(self.ky)), initial=0.0)
        if kmax > self.matrix / 2 + 1e-9:
            raise ValueError(f"|k| = {kmax} exceeds the Nyquist radius {self.matrix / 2}")

    @property
    def n_samples(self) -> int:
        return self.kx.size

    @property
    def samples_per_interleaf(self) -> int:
        return self.kx.size // self.n_interleaves

    @property
    def k(self) -> np.ndarray:
        """Sample locations as an ``(M, 2)`` array of ``(kx, ky)``."""
        return np.stack([self.kx, self.ky], axis=1)

    def interleaf(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = slice(i * self.samples_per_interleaf, (i + 1) * self.samples_per_interleaf)
        return self.kx[s], self.ky[s], self.t[s]


def make_spiral(matrix: int = 84, t_read: float = LONG_READOUT, dwell: float = DEFAULT_DWELL,
                n_interleaves: int | None = None, name: str = "") -> SpiralTrajectory:
    """Constant-angular-velocity Archimedean spiral.

    Each interleaf runs ``matrix / (2 * n_interleaves)`` turns out to radius
    ``matrix / 2``, so the combined interleaves have a radial turn spacing of
    exactly one cycle/FOV. Interleaf ``i`` is interleaf 0 rotated by
    ``2*pi*i / n_interleaves``.

    Parameters
    ----------
    matrix : int
        Image matrix size (square).
    t_read : float
        Readout duration in seconds.
    dwell : float
        Sampling interval in seconds.
    n_interleaves : int, optional
        Number of interleaves. Defaults to 13 for the 2.52 ms readout, 5 for
        the 7.936 ms readout, and otherwise the smallest count whose outer
        turn is sampled at no more than 1 cycle/FOV arc spacing.
    """
    if n_interleaves is None:
        n_interleaves = _default_interleaves(matrix, t_read, dwell)
    if matrix < 8:
        raise ValueError(f"matrix must be >= 8, got {matrix}")
    if not (t_read > 0 and dwell > 0):
        raise ValueError("t_read and dwell must be positive")
    if n_interleaves < 1:
        raise ValueError(f"n_interleaves must be >= 1, got {n_interleaves}")
    n = _sample_count(t_read, dwell)
    if n < 16:
        raise ValueError(f"t_read / dwell must be >= 16, got {t_read / dwell:g}")

    tau = np.arange(n) * dwell
    kmax = matrix / 2
    n_turns = matrix / (2 * n_interleaves)
    r = kmax * tau / t_read
    base = 2 * np.pi * n_turns * tau / t_read
    theta = base[None, :] + 2 * np.pi * np.arange(n_interleaves)[:, None] / n_interleaves
    kx = (r * np.cos(theta)).ravel()
    ky = (r * np.sin(theta)).ravel()
    t = np.tile(tau, n_interleaves)
    return SpiralTrajectory(kx, ky, t, n_interleaves, float(t_read), float(dwell), int(matrix), name)


def _sample_count(t_read: float, dwell: float) -> int:
    # guard against 2.52e-3 / 4e-6 evaluating to 629.9999...
    return int(math.floor(t_read / dwell + 1e-9))


def _default_interleaves(matrix: int, t_read: float, dwell: float) -> int:
    for known, count in DEFAULT_INTERLEAVES.items():
        if math.isclose(t_read, known, rel_tol=1e-9) and matrix == 84:
            return count
    n = _sample_count(t_read, dwell)
    # outer-turn arc spacing: 2*pi*kmax / (samples per turn) <= 1
    samples_per_turn_needed = 2 * np.pi * matrix / 2
    for n_int in range(1, matrix + 1):
        if n * 2 * n_int / matrix >= samples_per_turn_needed:
            return n_int
    return matrix


def timestamps(traj: SpiralTrajectory) -> np.ndarray:
    """Per-sample time since the start of its interleaf's readout (s)."""
    return traj.t

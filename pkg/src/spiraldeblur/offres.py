"""Off-resonance signal model for single-coil spiral readouts.

The signal of one frame with static field map ``f`` (Hz) is::

    s_j = sum_n m(x_n) exp(-i 2 pi f(x_n) t_j) exp(-i 2 pi k_j . x_n)

:func:`simulate_blur_exact` evaluates this exactly. The time-segmented model
approximates ``exp(-i 2 pi f t)`` by ``sum_l b_l(t) exp(-i 2 pi f tau_l)``
so that each term is one gridding NUFFT.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .core import axis_coordinates, check_fieldmap, check_image
from .transform import GriddingPlan, nufft_adjoint, nufft_forward

__all__ = [
    "simulate_blur_exact",
    "SegmentedModel",
    "default_segments",
    "build_segmented",
    "forward_segmented",
    "adjoint_segmented",
    "blur_frame",
]

_BLOCK = 64


def _phased_images(img, fmap, times, chunk):
    """Yield ``img * exp(-i 2 pi f t)`` for consecutive chunks of ``times``.

    Arithmetic time grids are built from exact block-start and offset
    exponentials (one complex product each, ~1e-16 relative error) to avoid
    one complex ``exp`` per (pixel, time).
    """
    n = times.size
    steps = np.diff(times)
    arithmetic = n > 2 * _BLOCK and np.allclose(steps, steps[0], rtol=0, atol=1e-15)
    if arithmetic:
        offsets = np.exp(-2j * np.pi * fmap[None] * (np.arange(_BLOCK) * steps[0])[:, None, None])
        offsets *= img
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        if not arithmetic:
            yield start, stop, np.exp(-2j * np.pi * fmap[None] * times[start:stop, None, None]) * img
            continue
        out = np.empty((stop - start,) + fmap.shape, dtype=np.complex128)
        for b0 in range(start, stop, _BLOCK):
            b1 = min(b0 + _BLOCK, stop)
            np.multiply(offsets[: b1 - b0], np.exp(-2j * np.pi * fmap * times[b0]),
                        out=out[b0 - start:b1 - start])
        yield start, stop, out


def simulate_blur_exact(img, fmap, traj) -> np.ndarray:
    """Exact k-space samples of ``img`` under static off-resonance ``fmap``.

    With ``fmap == 0`` this equals :func:`~spiraldeblur.transform.dft_forward`.
    Cost is O(M * N**2) but grouped so that samples sharing a timestamp share
    one phase-modulated image.
    """
    img = check_image(img)
    ny, nx = img.shape
    if ny != nx:
        raise ValueError(f"image must be square, got {img.shape}")
    fmap = check_fieldmap(fmap, img.shape)
    times, inverse, counts, order, ex, ey = _exact_factors(traj, nx)
    out = np.empty(inverse.size, dtype=np.complex128)
    uniform = np.all(counts == counts[0])
    for start, stop, phased in _phased_images(img, fmap, times, chunk=256):
        if uniform:
            c = counts[0]
            sel = slice(start * c, stop * c)
            rows = phased @ ex[sel].reshape(stop - start, c, nx).transpose(0, 2, 1)
            vals = np.einsum("tyc,tcy->tc", rows, ey[sel].reshape(stop - start, c, ny))
            out[order[sel]] = vals.ravel()
        else:
            sel = np.flatnonzero((inverse[order] >= start) & (inverse[order] < stop))
            rows = phased[inverse[order[sel]] - start] @ ex[sel][:, :, None]
            out[order[sel]] = np.einsum("jy,jy->j", ey[sel], rows[:, :, 0])
    return out


_FACTOR_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _exact_factors(traj, n):
    """Samples sorted by timestamp with their separable encoding exponentials."""
    per_traj = _FACTOR_CACHE.setdefault(traj, {})
    if n not in per_traj:
        kx, ky, t = (np.asarray(a, dtype=np.float64) for a in (traj.kx, traj.ky, traj.t))
        times, inverse, counts = np.unique(t, return_inverse=True, return_counts=True)
        order = np.argsort(inverse, kind="stable")
        xs = axis_coordinates(n)
        ex = np.exp(-2j * np.pi * np.multiply.outer(kx[order], xs))
        ey = np.exp(-2j * np.pi * np.multiply.outer(ky[order], xs))
        per_traj[n] = (times, inverse, counts, order, ex, ey)
    return per_traj[n]


@dataclass(frozen=True, eq=False)
class SegmentedModel:
    """Time-segmented off-resonance operator for one field map and trajectory.

    ``weights`` has shape ``(L, M)``: ``weights[l, j] = b_l(t_j)``.
    ``phases`` has shape ``(L, H, W)``: ``exp(-i 2 pi f tau_l)``.
    """

    n_segments: int
    segment_times: np.ndarray
    weights: np.ndarray
    phases: np.ndarray
    plan: GriddingPlan
    interpolator: str


def default_segments(f_max: float, t_read: float) -> int:
    """``ceil(max|f| * t_read) * 4 + 1`` clamped to ``[2, 64]``."""
    return int(min(64, max(2, math.ceil(abs(f_max) * t_read) * 4 + 1)))


def _linear_weights(t, tau):
    n = tau.size
    span = tau[-1] - tau[0]
    pos = np.clip((t - tau[0]) / span * (n - 1), 0, n - 1) if span > 0 else np.zeros_like(t)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = pos - lo
    w = np.zeros((n, t.size))
    cols = np.arange(t.size)
    w[lo, cols] = 1 - frac
    w[lo + 1, cols] += frac
    return w


def _lsq_weights(t, tau, fmap, resolution=1.0):
    # field-map histogram weighted least squares fit over the occurring frequencies
    f = np.round(fmap.ravel() / resolution) * resolution
    freqs, hist = np.unique(f, return_counts=True)
    sqrt_h = np.sqrt(hist / hist.sum())[:, None]
    basis = np.exp(-2j * np.pi * np.outer(freqs, tau)) * sqrt_h
    target = np.exp(-2j * np.pi * np.outer(freqs, t)) * sqrt_h
    coef, *_ = np.linalg.lstsq(basis, target, rcond=1e-10)
    return coef


def build_segmented(fmap, traj, plan: GriddingPlan, n_segments: int | None = None,
                    interpolator: str = "lsq") -> SegmentedModel:
    """Build the time-segmented forward model for ``fmap`` on ``traj``.

    Parameters
    ----------
    n_segments : int, optional
        Number of segment times ``L``. Defaults to :func:`default_segments`
        evaluated at ``max|fmap|`` and the trajectory readout duration.
    interpolator : {"lsq", "linear"}
        ``"linear"`` uses hat-function weights: a partition of unity with at
        most two nonzero weights per sample. ``"lsq"`` fits complex weights
        by least squares over the field-map histogram (Sutton et al. 2003),
        which is far more accurate for the same ``L``.
    """
    fmap = check_fieldmap(fmap, plan.image_shape)
    t = np.asarray(traj.t, dtype=np.float64)
    if t.size != plan.n_samples:
        raise ValueError("plan was not built for this trajectory")
    if n_segments is None:
        n_segments = default_segments(np.max(np.abs(fmap)), traj.readout_duration)
    if n_segments < 2:
        raise ValueError(f"n_segments must be >= 2, got {n_segments}")
    tau = np.linspace(0.0, t.max(), n_segments)
    if interpolator == "linear":
        weights = _linear_weights(t, tau)
    elif interpolator == "lsq":
        weights = _lsq_weights(t, tau, fmap)
    else:
        raise ValueError(f"unknown interpolator {interpolator!r}")
    phases = np.exp(-2j * np.pi * fmap[None] * tau[:, None, None])
    for a in (tau, weights, phases):
        a.setflags(write=False)
    return SegmentedModel(n_segments, tau, weights, phases, plan, interpolator)


def forward_segmented(img, model: SegmentedModel) -> np.ndarray:
    """``sum_l b_l(t) * nufft_forward(img * exp(-i 2 pi f tau_l))``."""
    img = np.asarray(img, dtype=np.complex128)
    if img.shape != model.plan.image_shape:
        raise ValueError(f"image shape {img.shape} does not match model {model.plan.image_shape}")
    segs = nufft_forward(model.phases * img, model.plan)
    return np.einsum("lj,lj->j", model.weights, segs)


def adjoint_segmented(data, model: SegmentedModel) -> np.ndarray:
    """Exact adjoint of :func:`forward_segmented` (unit density weights)."""
    data = np.asarray(data, dtype=np.complex128)
    if data.shape != (model.plan.n_samples,):
        raise ValueError(f"data length {data.shape} does not match model ({model.plan.n_samples})")
    imgs = nufft_adjoint(model.weights.conj() * data, model.plan)
    return np.einsum("lyx,lyx->yx", model.phases.conj(), imgs)


def blur_frame(img, fmap, traj, plan: GriddingPlan, density) -> np.ndarray:
    """Uncorrected gridding reconstruction of exactly simulated blurred data."""
    return nufft_adjoint(simulate_blur_exact(img, fmap, traj), plan, density)

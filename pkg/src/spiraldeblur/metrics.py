"""PSNR, SSIM and HFEN on magnitude images."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate

__all__ = [
    "PSNR_CAP",
    "psnr",
    "ssim",
    "gaussian_window",
    "log_kernel",
    "hfen",
    "aggregate",
    "RunningStats",
    "MetricReport",
]

PSNR_CAP = 200.0


def _magnitudes(x, ref):
    x = np.abs(np.asarray(x))
    ref = np.abs(np.asarray(ref))
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x.astype(np.float64), ref.astype(np.float64)


def psnr(x, ref) -> float:
    """Peak SNR in dB with peak ``max|ref|``; capped at 200 dB."""
    x, ref = _magnitudes(x, ref)
    peak = ref.max()
    if not peak > 0:
        raise ValueError("reference image is zero")
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * math.log10(peak ** 2 / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    c = np.arange(size) - (size - 1) / 2
    g = np.exp(-(c ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, data_range: float | None = None, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully contained windows (Wang et al. 2004).

    Uses a Gaussian window and ``C1 = (0.01 L)**2``, ``C2 = (0.03 L)**2``
    with ``L = max|ref|`` unless ``data_range`` is given.
    """
    x, ref = _magnitudes(x, ref)
    if min(x.shape) < win_size:
        raise ValueError(f"images must be at least {win_size} pixels on each side")
    L = ref.max() if data_range is None else float(data_range)
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2
    w = gaussian_window(win_size, sigma)

    def local_mean(a):
        return np.einsum("ijkl,kl->ij", sliding_window_view(a, w.shape), w)

    mx, my = local_mean(x), local_mean(ref)
    sxx = local_mean(x * x) - mx * mx
    syy = local_mean(ref * ref) - my * my
    sxy = local_mean(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def log_kernel(size: int = 15, sigma: float = 1.5) -> np.ndarray:
    """Zero-sum Laplacian-of-Gaussian kernel."""
    c = np.arange(size) - (size - 1) / 2
    xx, yy = np.meshgrid(c, c)
    r2 = xx ** 2 + yy ** 2
    k = (r2 - 2 * sigma ** 2) / (2 * np.pi * sigma ** 6) * np.exp(-r2 / (2 * sigma ** 2))
    return k - k.mean()


def hfen(x, ref, size: int = 15, sigma: float = 1.5, padding: str = "constant") -> float:
    """``||LoG(|x|) - LoG(|ref|)|| / ||LoG(|ref|)||`` (Ravishankar & Bresler 2011).

    ``padding`` is passed to :func:`scipy.ndimage.correlate` as ``mode``;
    the default zero padding follows the original definition.
    """
    x, ref = _magnitudes(x, ref)
    k = log_kernel(size, sigma)
    lx = correlate(x, k, mode=padding, cval=0.0)
    lr = correlate(ref, k, mode=padding, cval=0.0)
    denom = np.linalg.norm(lr)
    if denom == 0:
        raise ValueError("LoG of the reference image is identically zero")
    return float(np.linalg.norm(lx - lr) / denom)


def aggregate(values) -> tuple[float, float]:
    """Two-pass mean and population standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    mean = v.sum() / v.size
    return float(mean), float(math.sqrt(np.sum((v - mean) ** 2) / v.size))


class RunningStats:
    """Welford's streaming mean/variance."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, value: float):
        self.n += 1
        d = value - self.mean
        self.mean += d / self.n
        self._m2 += d * (value - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self._m2 / self.n) if self.n else math.nan


@dataclass
class MetricReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    hfen: list[float] = field(default_factory=list)

    def add(self, x, ref):
        self.psnr.append(psnr(x, ref))
        self.ssim.append(ssim(x, ref))
        self.hfen.append(hfen(x, ref))

    def summary(self) -> dict[str, tuple[float, float]]:
        return {"psnr": aggregate(self.psnr), "ssim": aggregate(self.ssim),
                "hfen": aggregate(self.hfen)}

"""Multi-frequency interpolation (Man et al. 1997) with a known field map.

Images are reconstructed at a bank of constant demodulation frequencies
``f_l`` and combined per pixel as ``m(x) = sum_l c_l(f(x)) m_l(x)``, where
``c(f)`` is the least-squares fit of ``exp(i 2 pi f t)`` by the bank
exponentials over the readout timestamps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import check_fieldmap
from .transform import GriddingPlan, nufft_adjoint

__all__ = ["MfiBank", "default_bins", "build_mfi_bank", "mfi_deblur"]

MAX_RESIDUAL = 0.01
MAX_CONDITION = 1e8


@dataclass(frozen=True, eq=False)
class MfiBank:
    frequencies: np.ndarray
    table_start: float
    table_step: float  # <= 1 Hz, chosen so every bin frequency is a table entry
    coeff_table: np.ndarray  # (n_table, L)
    fit_residual: float
    condition: float
    n_samples: int
    readout_duration: float

    @property
    def f_min(self) -> float:
        return float(self.frequencies[0])

    @property
    def f_max(self) -> float:
        return float(self.frequencies[-1])

    def coefficients(self, f) -> np.ndarray:
        """Coefficient rows for frequencies ``f`` (nearest table entry)."""
        pos = (np.asarray(f, dtype=np.float64) - self.table_start) / self.table_step
        idx = np.rint(pos).astype(np.int64)
        return self.coeff_table[np.clip(idx, 0, self.coeff_table.shape[0] - 1)]


def default_bins(f_min: float, f_max: float, t_read: float) -> int:
    """``ceil((f_max - f_min) * t_read) * 2 + 1`` clamped to ``[3, 48]``."""
    return int(min(48, max(3, math.ceil((f_max - f_min) * t_read) * 2 + 1)))


def build_mfi_bank(traj, f_min: float, f_max: float, l_mfi: int | None = None) -> MfiBank:
    """Fit MFI coefficients on a fine frequency table over ``[f_min, f_max]``.

    The table spacing is the largest step <= 1 Hz that places every bin
    frequency exactly on a table entry.

    With ``l_mfi=None`` the bin count starts at :func:`default_bins` and grows
    by 2 (up to 48) until the fit residual is below 1%. When
    ``f_min == f_max`` the bank degenerates to three bins spaced
    ``1 / (2 * t_read)`` apart around that frequency.

    Raises
    ------
    ValueError
        If ``f_max < f_min``, ``l_mfi < 2``, or the worst relative fit
        residual exceeds 1%.
    """
    if f_max < f_min:
        raise ValueError(f"f_max ({f_max}) must be >= f_min ({f_min})")
    t_read = traj.readout_duration
    if f_max == f_min:
        if l_mfi not in (None, 3):
            raise ValueError("a degenerate frequency range supports exactly 3 bins")
        # only the centre frequency is requested and it is an exact bin, so the
        # off-centre table entries are not held to the residual bound
        half = 1 / (2 * t_read)
        return _fit_bank(traj, f_min - half, f_max + half, 3, check=False)
    if l_mfi is not None:
        if l_mfi < 2:
            raise ValueError(f"l_mfi must be >= 2, got {l_mfi}")
        return _fit_bank(traj, f_min, f_max, l_mfi)
    n = default_bins(f_min, f_max, t_read)
    while True:
        try:
            return _fit_bank(traj, f_min, f_max, n)
        except ValueError:
            if n >= 48:
                raise
            n = min(48, n + 2)


def _fit_bank(traj, f_min, f_max, n_bins, check=True) -> MfiBank:
    stride = max(1, math.ceil((f_max - f_min) / (n_bins - 1)))
    step = (f_max - f_min) / ((n_bins - 1) * stride)
    table_f = f_min + step * np.arange((n_bins - 1) * stride + 1)
    table_f[-1] = f_max  # exact, so maps reaching f_max are never clamped
    freqs = table_f[::stride].copy()
    times, counts = np.unique(np.asarray(traj.t, dtype=np.float64), return_counts=True)
    sw = np.sqrt(counts)[:, None]
    basis = np.exp(2j * np.pi * np.outer(times, freqs)) * sw
    target = np.exp(2j * np.pi * np.outer(times, table_f)) * sw

    u, s, vh = np.linalg.svd(basis, full_matrices=False)
    condition = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    keep = s > s[0] / MAX_CONDITION
    coef = (vh[keep].conj().T / s[keep]) @ (u[:, keep].conj().T @ target)
    resid = np.linalg.norm(target - basis @ coef, axis=0) / np.linalg.norm(target, axis=0)
    worst = float(resid.max())
    if check and worst > MAX_RESIDUAL:
        raise ValueError(f"MFI fit residual {worst:.3g} exceeds {MAX_RESIDUAL} "
                         f"with {freqs.size} bins (condition number {condition:.3g})")
    table = coef.T.copy()
    for a in (freqs, table):
        a.setflags(write=False)
    return MfiBank(freqs, float(f_min), float(step), table, worst, condition, int(traj.t.size),
                   float(traj.readout_duration))


def mfi_deblur(data, fmap, bank: MfiBank, plan: GriddingPlan, density, traj=None,
               return_clamped: bool = False):
    """Combine frequency-demodulated gridding reconstructions per pixel.

    Field-map values outside the bank range are clamped to it; the number of
    clamped pixels is returned when ``return_clamped`` is set.
    """
    data = np.asarray(data, dtype=np.complex128)
    if data.shape != (plan.n_samples,) or bank.n_samples != plan.n_samples:
        raise ValueError("bank, plan and data were not built for the same trajectory")
    if traj is None:
        raise ValueError("mfi_deblur needs the trajectory timestamps")
    fmap = check_fieldmap(fmap, plan.image_shape)
    t = np.asarray(traj.t, dtype=np.float64)
    demod = np.exp(2j * np.pi * np.outer(bank.frequencies, t)) * data
    base = nufft_adjoint(demod, plan, density)
    outside = (fmap < bank.f_min) | (fmap > bank.f_max)
    n_clamped = int(np.count_nonzero(outside))
    if n_clamped:
        warnings.warn(f"{n_clamped} field-map pixels outside the MFI bank range were clamped",
                      RuntimeWarning, stacklevel=2)
    coef = bank.coefficients(np.clip(fmap, bank.f_min, bank.f_max))
    out = np.einsum("yxl,lyx->yx", coef, base)
    return (out, n_clamped) if return_clamped else out

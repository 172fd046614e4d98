"""Non-uniform Fourier transforms on spiral trajectories.

Two routes are provided for the same linear map::

    s_j = sum_n m(x_n) exp(-i 2 pi k_j . x_n)

``dft_forward``/``dft_adjoint`` evaluate it exactly (separable
exponential factors, no approximation) and serve as the oracle.
``nufft_forward``/``nufft_adjoint`` evaluate it with Kaiser-Bessel gridding
on a 2x oversampled grid.

FFT convention: forward unnormalized, inverse scaled by ``1 / K**2`` (numpy
default). The adjoint of the forward FFT is therefore ``K**2 * ifft2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import i0

from .core import axis_coordinates, check_image

__all__ = [
    "dft_forward",
    "dft_adjoint",
    "GriddingPlan",
    "build_plan",
    "kaiser_bessel_beta",
    "nufft_forward",
    "nufft_adjoint",
    "pipe_menon_density",
    "DEFAULT_OVERSAMPLING",
    "DEFAULT_KERNEL_WIDTH",
    "TABLE_LENGTH",
]

DEFAULT_OVERSAMPLING = 2.0
DEFAULT_KERNEL_WIDTH = 6
TABLE_LENGTH = 2 ** 14


def _encoding_factors(kx, ky, ny, nx):
    ex = np.exp(-2j * np.pi * np.outer(kx, axis_coordinates(nx)))
    ey = np.exp(-2j * np.pi * np.outer(ky, axis_coordinates(ny)))
    return ex, ey


def dft_forward(img, traj) -> np.ndarray:
    """Exact non-uniform DFT of ``img`` at the trajectory samples."""
    img = check_image(img)
    ny, nx = img.shape
    if ny != nx:
        raise ValueError(f"image must be square, got {img.shape}")
    ex, ey = _encoding_factors(traj.kx, traj.ky, ny, nx)
    return np.sum((ey @ img) * ex, axis=1)


def dft_adjoint(data, traj, matrix: int) -> np.ndarray:
    """Exact adjoint of :func:`dft_forward`: ``m(x_n) = sum_j s_j exp(+i 2 pi k_j . x_n)``."""
    data = np.asarray(data, dtype=np.complex128).ravel()
    if data.size != traj.kx.size:
        raise ValueError(f"data length {data.size} does not match trajectory ({traj.kx.size})")
    ex, ey = _encoding_factors(traj.kx, traj.ky, matrix, matrix)
    return (ey.conj() * data[:, None]).T @ ex.conj()


def kaiser_bessel_beta(oversampling: float, width: float) -> float:
    """Shape parameter from Beatty et al. (2005) for a given grid ratio and width."""
    return math.pi * math.sqrt((width / oversampling) ** 2 * (oversampling - 0.5) ** 2 - 0.8)


def _kb_table(width: float, beta: float, length: int = TABLE_LENGTH):
    u = np.linspace(0.0, width / 2, length)
    return u, i0(beta * np.sqrt(np.clip(1 - (2 * u / width) ** 2, 0.0, None)))


def _kb_transform(nu, width: float, beta: float):
    """Continuous Fourier transform of the unnormalized KB kernel at ``nu`` (cycles/cell)."""
    z = beta ** 2 - (np.pi * width * np.asarray(nu, dtype=np.float64)) ** 2
    out = np.empty_like(z)
    pos = z > 0
    rz = np.sqrt(np.abs(z))
    out[pos] = width * np.sinh(rz[pos]) / rz[pos]
    zero = rz == 0
    out[zero] = width
    neg = ~pos & ~zero
    out[neg] = width * np.sin(rz[neg]) / rz[neg]
    return out


@dataclass(frozen=True, eq=False)
class GriddingPlan:
    """Precomputed gridding operator for one (matrix, trajectory) pair.

    ``interp`` is the sparse ``(M, K*K)`` kernel interpolation matrix from
    the oversampled Cartesian grid to the samples; ``spread`` is its
    transpose. Rows of the grid use unshifted FFT ordering.
    """

    matrix: int
    grid_size: int
    oversampling: float
    kernel_width: int
    beta: float
    deapodization: np.ndarray
    interp: sp.csr_matrix
    spread: sp.csr_matrix
    pixel_index: np.ndarray
    n_samples: int
    kmax: float

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.matrix, self.matrix)


def build_plan(traj, matrix: int | None = None, oversampling: float = DEFAULT_OVERSAMPLING,
               kernel_width: int = DEFAULT_KERNEL_WIDTH) -> GriddingPlan:
    """Build a :class:`GriddingPlan` for ``traj`` on a ``matrix`` x ``matrix`` image."""
    if matrix is None:
        matrix = traj.matrix
    if oversampling < 1 or kernel_width < 2:
        raise ValueError("oversampling must be >= 1 and kernel_width >= 2")
    grid = int(math.ceil(oversampling * matrix))
    grid += grid % 2
    sigma = grid / matrix
    beta = kaiser_bessel_beta(sigma, kernel_width)
    table_u, table = _kb_table(kernel_width, beta)

    rows, cols, vals = [], [], []
    half = kernel_width / 2
    ux = sigma * np.asarray(traj.kx)
    uy = sigma * np.asarray(traj.ky)
    bx = np.ceil(ux - half).astype(np.int64)
    by = np.ceil(uy - half).astype(np.int64)
    offs = np.arange(kernel_width)
    gx = bx[:, None] + offs[None, :]
    gy = by[:, None] + offs[None, :]
    wx = np.interp(np.abs(ux[:, None] - gx), table_u, table, right=0.0)
    wy = np.interp(np.abs(uy[:, None] - gy), table_u, table, right=0.0)
    m = ux.size
    vals = (wy[:, :, None] * wx[:, None, :]).reshape(m, -1)
    cols = ((gy[:, :, None] % grid) * grid + (gx[:, None, :] % grid)).reshape(m, -1)
    rows = np.repeat(np.arange(m), kernel_width ** 2).reshape(m, -1)
    interp = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                           shape=(m, grid * grid)).tocsr()
    interp.sum_duplicates()

    x = axis_coordinates(matrix)
    apod = _kb_transform(x / sigma, kernel_width, beta)
    deapod = np.outer(apod, apod)
    if not np.all(np.isfinite(deapod)) or np.any(deapod <= 0):
        raise ValueError("deapodization map is not finite and positive")
    deapod.setflags(write=False)
    pixel_index = (np.arange(matrix) - matrix // 2) % grid
    kmax = float(np.max(np.hypot(traj.kx, traj.ky), initial=0.0))
    return GriddingPlan(matrix, grid, sigma, kernel_width, beta, deapod, interp,
                        interp.T.tocsr(), pixel_index, m, kmax)


def _check_plan_image(img, plan):
    img = np.asarray(img)
    if img.shape[-2:] != plan.image_shape:
        raise ValueError(f"image shape {img.shape[-2:]} does not match plan {plan.image_shape}")


def nufft_forward(img, plan: GriddingPlan) -> np.ndarray:
    """Gridding approximation of :func:`dft_forward`.

    ``img`` may carry leading batch dimensions; the result then has shape
    ``(*batch, M)``.
    """
    img = np.asarray(img, dtype=np.complex128)
    _check_plan_image(img, plan)
    batch = img.shape[:-2]
    img = img.reshape((-1,) + plan.image_shape)
    k = plan.grid_size
    buf = np.zeros((img.shape[0], k, k), dtype=np.complex128)
    idx = plan.pixel_index
    buf[:, idx[:, None], idx[None, :]] = img / plan.deapodization
    spec = np.fft.fft2(buf).reshape(img.shape[0], -1)
    out = (plan.interp @ spec.T).T
    return out.reshape(batch + (plan.n_samples,))


def nufft_adjoint(data, plan: GriddingPlan, density=None) -> np.ndarray:
    """Adjoint gridding: weight, spread, inverse FFT, crop, deapodize.

    With ``density=None`` (unit weights) this is the exact adjoint of
    :func:`nufft_forward`; with density compensation weights it is the
    standard gridding reconstruction. Leading batch dimensions are allowed.
    """
    data = np.asarray(data, dtype=np.complex128)
    if data.shape[-1] != plan.n_samples:
        raise ValueError(f"data length {data.shape[-1]} does not match plan ({plan.n_samples})")
    batch = data.shape[:-1]
    data = data.reshape(-1, plan.n_samples)
    if density is not None:
        density = np.asarray(density, dtype=np.float64)
        if density.shape != (plan.n_samples,):
            raise ValueError("density weights do not match the plan")
        data = data * density
    k = plan.grid_size
    grid = (plan.spread @ data.T).T.reshape(-1, k, k)
    img = np.fft.ifft2(grid) * (k * k)
    idx = plan.pixel_index
    img = img[:, idx[:, None], idx[None, :]] / plan.deapodization
    return img.reshape(batch + plan.image_shape)


def pipe_menon_density(traj, plan: GriddingPlan, iters: int = 20) -> np.ndarray:
    """Iterative density compensation ``w <- w / (G G^T w)`` (Pipe & Menon 1999).

    The weights are scaled so that the density-compensated gridding
    reconstruction has unit gain at DC: ``w_j`` approximates the k-space
    area owned by sample ``j`` divided by ``matrix**2``.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if plan.n_samples != np.asarray(traj.kx).size:
        raise ValueError("plan was not built for this trajectory")
    w = np.ones(plan.n_samples)
    for _ in range(iters):
        denom = plan.interp @ (plan.spread @ w)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(denom > 0, w / denom, 0.0)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("density compensation diverged")
    kernel_area = _kb_transform(np.zeros(1), plan.kernel_width, plan.beta)[0]
    return w * kernel_area ** 4 / (plan.oversampling * plan.matrix) ** 2

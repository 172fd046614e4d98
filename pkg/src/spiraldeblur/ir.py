"""Model-based iterative reconstruction with a known field map."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import check_fieldmap, inner_product
from .offres import SegmentedModel, adjoint_segmented, build_segmented, forward_segmented
from .transform import GriddingPlan

__all__ = ["CgConfig", "CgReport", "cg_solve", "ir_deblur", "check_adjoint"]


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 30
    tol: float = 1e-6
    lam: float = 0.0
    warm_start: bool = False
    check_adjoint: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0 or self.lam < 0:
            raise ValueError(f"invalid CG configuration: {self}")


@dataclass
class CgReport:
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    converged: bool = False

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residuals, start=1):
                w.writerow([i, repr(float(r))])


def cg_solve(apply_normal_op, rhs, cfg: CgConfig = CgConfig(), x0=None, callback=None):
    """Conjugate gradients for a Hermitian positive semidefinite operator.

    Parameters
    ----------
    apply_normal_op : callable
        ``x -> A x`` on arrays shaped like ``rhs``.
    rhs : ndarray
    cfg : CgConfig
    x0 : ndarray, optional
        Initial iterate; zero when omitted.
    callback : callable, optional
        Called as ``callback(iteration, x)`` after every update.

    Returns
    -------
    x : ndarray
    report : CgReport
        ``residuals[i]`` is the residual norm after iteration ``i + 1``.
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    report = CgReport()
    rhs_norm = np.linalg.norm(rhs)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.complex128)
    r = rhs - apply_normal_op(x) if x0 is not None else rhs.copy()
    rs = inner_product(r, r).real
    if rhs_norm == 0 or np.sqrt(rs) <= cfg.tol * rhs_norm:
        report.iterations = 1
        report.residuals.append(float(np.sqrt(rs)))
        report.converged = True
        return x, report
    p = r.copy()
    for it in range(1, cfg.max_iters + 1):
        ap = apply_normal_op(p)
        pap = inner_product(p, ap).real
        if not np.isfinite(pap):
            raise FloatingPointError(f"non-finite value in CG at iteration {it}")
        if pap <= 1e-14 * rs:
            raise ArithmeticError(f"CG breakdown at iteration {it}: p^H A p = {pap:.3g}")
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = inner_product(r, r).real
        report.iterations = it
        report.residuals.append(float(np.sqrt(rs_new)))
        if callback is not None:
            callback(it, x)
        if np.sqrt(rs_new) < cfg.tol * rhs_norm:
            report.converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, report


def check_adjoint(model: SegmentedModel, seed: int = 0, tol: float = 1e-6) -> float:
    """Relative dot-product test of the segmented forward/adjoint pair."""
    rng = np.random.default_rng(seed)
    shape = model.plan.image_shape
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = rng.standard_normal(model.plan.n_samples) + 1j * rng.standard_normal(model.plan.n_samples)
    lhs = inner_product(forward_segmented(x, model), y)
    rhs = inner_product(x, adjoint_segmented(y, model))
    err = abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y))
    if err > tol:
        raise ArithmeticError(f"segmented adjoint mismatch: {err:.3g}")
    return err


def ir_deblur(data, fmap, traj, plan: GriddingPlan, cfg: CgConfig = CgConfig(), x0=None,
              model: SegmentedModel | None = None, callback=None):
    """Least-squares inversion of the time-segmented model by CG on the normal equations.

    Minimizes ``||A m - y||^2 + lam ||m||^2`` with ``A`` the segmented
    off-resonance operator built from ``fmap`` at the default segment count.
    """
    data = np.asarray(data, dtype=np.complex128)
    if data.shape != (plan.n_samples,):
        raise ValueError(f"data length {data.shape} does not match plan ({plan.n_samples})")
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("k-space data contains non-finite values")
    fmap = check_fieldmap(fmap, plan.image_shape)
    if model is None:
        model = build_segmented(fmap, traj, plan)
    if cfg.check_adjoint:
        check_adjoint(model)

    def normal(x):
        return adjoint_segmented(forward_segmented(x, model), model) + cfg.lam * x

    start = x0 if cfg.warm_start else None
    return cg_solve(normal, adjoint_segmented(data, model), cfg, x0=start, callback=callback)

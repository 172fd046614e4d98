"""Shared conventions: image coordinates, complex inner product, seeded RNG.

Images are 2-D complex128 numpy arrays indexed ``[row, col] = [y, x]``.
numpy's complex layout is interleaved (re, im) row-major, which is the
single storage convention used throughout. Field maps are float64 arrays
in Hz with the same shape. The field of view is normalized to 1, so
k-space coordinates are in cycles/FOV.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "pixel_coordinates",
    "axis_coordinates",
    "inner_product",
    "make_rng",
    "check_image",
    "check_fieldmap",
]


def axis_coordinates(n: int) -> np.ndarray:
    """Coordinates of ``n`` pixels along one axis in FOV units.

    Index ``n // 2`` maps to 0 and the spacing is exactly ``1 / n``.
    """
    if n < 1:
        raise ValueError(f"axis length must be >= 1, got {n}")
    return (np.arange(n, dtype=np.float64) - n // 2) / n


def pixel_coordinates(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, y)`` coordinate grids of shape ``(height, width)``.

    Both lie in ``[-1/2, 1/2)``; the center pixel ``(height // 2, width // 2)``
    sits at the origin.
    """
    y = axis_coordinates(height)
    x = axis_coordinates(width)
    return np.meshgrid(x, y, indexing="xy")


def inner_product(a, b) -> complex:
    """Return ``sum(conj(a) * b)`` over all elements."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return complex(np.vdot(a.ravel(), b.ravel()))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and an optional stream path.

    Child streams are derived as ``make_rng(seed, subject, frame)`` rather
    than by sharing one generator, so results do not depend on the order in
    which work is scheduled.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def check_image(img, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {img.shape}")
    img = img.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def check_fieldmap(fmap, shape=None) -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 2:
        raise ValueError(f"field map must be 2-D, got shape {fmap.shape}")
    if shape is not None and fmap.shape != tuple(shape):
        raise ValueError(f"field map shape {fmap.shape} does not match image {tuple(shape)}")
    if not np.all(np.isfinite(fmap)):
        raise ValueError("field map contains non-finite values")
    return fmap

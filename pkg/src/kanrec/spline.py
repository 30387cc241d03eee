"""Uniform B-spline bases on a fixed interval.

A grid with ``G`` intervals on ``[range_min, range_max]`` and spline order ``k``
carries ``G + 2k + 1`` uniformly spaced knots (``k`` extra knots past each end)
and therefore ``G + k`` basis functions. Inputs outside the interval are
clamped to it before evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SplineGrid:
    range_min: float
    range_max: float
    G: int
    k: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.range_min) and np.isfinite(self.range_max)):
            raise ValueError("grid bounds must be finite")
        if not self.range_min < self.range_max:
            raise ValueError(f"range_min must be < range_max, got {self.range_min} >= {self.range_max}")
        if int(self.G) != self.G or self.G < 1:
            raise ValueError(f"G must be a positive integer, got {self.G}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "G", int(self.G))
        object.__setattr__(self, "k", int(self.k))
        h = (self.range_max - self.range_min) / self.G
        knots = self.range_min + h * np.arange(-self.k, self.G + self.k + 1, dtype=np.float64)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def spacing(self) -> float:
        return (self.range_max - self.range_min) / self.G

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    def clamp(self, x):
        return np.clip(x, self.range_min, self.range_max)

    def inside(self, x):
        """Mask of points that are not moved by clamping."""
        return (x >= self.range_min) & (x <= self.range_max)


def make_grid(range_min: float, range_max: float, G: int, k: int = 3) -> SplineGrid:
    return SplineGrid(float(range_min), float(range_max), G, k)


def _check_finite(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("spline input must be finite")
    return x


def _bases_up_to(grid: SplineGrid, x: np.ndarray, degree: int) -> np.ndarray:
    """Cox-de Boor recursion up to ``degree`` on already-clamped ``x``.

    Returns an array of shape ``x.shape + (G + 2k - degree,)``.
    """
    t = grid.knots
    x = x[..., None]
    bases = ((x >= t[:-1]) & (x < t[1:])).astype(np.float64)
    for d in range(1, degree + 1):
        left = (x - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)])
        right = (t[d + 1 :] - x) / (t[d + 1 :] - t[1:-d])
        bases = left * bases[..., :-1] + right * bases[..., 1:]
    return bases


def basis_values(grid: SplineGrid, x) -> np.ndarray:
    """B_i(x) for i = 0 .. G+k-1, broadcast over any input shape."""
    x = grid.clamp(_check_finite(x))
    return _bases_up_to(grid, x, grid.k)


def basis_derivatives(grid: SplineGrid, x) -> np.ndarray:
    """dB_i/dx; zero where the input was clamped."""
    x = _check_finite(x)
    xc = grid.clamp(x)
    lower = _bases_up_to(grid, xc, grid.k - 1)
    # uniform knots: k / (t_{i+k} - t_i) == 1 / spacing
    deriv = (lower[..., :-1] - lower[..., 1:]) / grid.spacing
    return np.where(grid.inside(x)[..., None], deriv, 0.0)


def basis_values_and_derivatives(grid: SplineGrid, x):
    """Both arrays from one pass of the recursion."""
    x = _check_finite(x)
    if x.size > 4096:
        # binary or otherwise low-cardinality inputs: evaluate each value once
        uniq, inverse = np.unique(x, return_inverse=True)
        if uniq.size * 8 <= x.size:
            values, deriv = _values_and_derivatives(grid, uniq)
            inverse = inverse.reshape(x.shape)
            return values[inverse], deriv[inverse]
    return _values_and_derivatives(grid, x)


def _values_and_derivatives(grid, x):
    xc = grid.clamp(x)
    lower = _bases_up_to(grid, xc, grid.k - 1)
    t = grid.knots
    k = grid.k
    xe = xc[..., None]
    left = (xe - t[: -(k + 1)]) / (t[k:-1] - t[: -(k + 1)])
    right = (t[k + 1 :] - xe) / (t[k + 1 :] - t[1:-k])
    values = left * lower[..., :-1] + right * lower[..., 1:]
    deriv = (lower[..., :-1] - lower[..., 1:]) / grid.spacing
    deriv = np.where(grid.inside(x)[..., None], deriv, 0.0)
    return values, deriv


def spline_eval(grid: SplineGrid, coeffs, x):
    """sum_i coeffs[i] * B_i(clamp(x))."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != grid.n_basis:
        raise ValueError(f"expected {grid.n_basis} coefficients, got {coeffs.shape[-1]}")
    out = basis_values(grid, x) @ coeffs
    return float(out) if np.ndim(out) == 0 else out

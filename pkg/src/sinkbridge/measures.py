"""Piecewise-constant densities on [0,1] and [0,1]^2 and their divergences.

Vectors and matrices embed into densities by the ceiling convention
x -> cell ceil(m*x) (with x = 0 mapped to the first cell), which makes the
embedding isometric for the Hellinger and L1 distances used throughout.
The base measure is Lebesgue on the grid, so a cell of a length-m vector
carries measure 1/m and a cell of an m x n matrix carries measure 1/(m*n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NonPositiveTotal, ZeroEntry
from .scaling import MarginPair, ScalingProblem

__all__ = [
    "GridDensity1D",
    "GridDensity2D",
    "histogram_density_1d",
    "kernel_density_2d",
    "hellinger",
    "total_variation",
    "kl_divergence",
    "l1_density_distance",
    "delta_smoothness",
    "cost_bound_K",
    "integrate_test",
    "TEST_FUNCTIONS",
    "lookup_test_function",
]

INF = np.inf


@dataclass(frozen=True)
class GridDensity1D:
    """Density constant on cells ((i-1)/m, i/m]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise GridMismatch("1-D density requires a vector of cell values")
        if (v < 0).any():
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def cell_measure(self) -> float:
        return 1.0 / self.m

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_measure)

    def is_probability(self, tol: float = 1e-9) -> bool:
        return abs(self.mass() - 1.0) <= tol

    def refine(self, factor: int) -> "GridDensity1D":
        return GridDensity1D(np.repeat(self.values, factor))


@dataclass(frozen=True)
class GridDensity2D:
    """Density constant on the m x n product cells of the unit square."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise GridMismatch("2-D density requires a matrix of cell values")
        if (v < 0).any():
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_measure(self) -> float:
        m, n = self.values.shape
        return 1.0 / (m * n)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_measure)

    def is_probability(self, tol: float = 1e-9) -> bool:
        return abs(self.mass() - 1.0) <= tol

    def refine(self, row_factor: int, col_factor: int) -> "GridDensity2D":
        return GridDensity2D(
            np.repeat(np.repeat(self.values, row_factor, axis=0), col_factor, axis=1)
        )


def histogram_density_1d(v: np.ndarray, total: float) -> GridDensity1D:
    """Embed a nonnegative vector as the density (m/total) * v(ceil(m x))."""
    if total <= 0:
        raise NonPositiveTotal(f"total must be positive, got {total!r}")
    v = np.asarray(v, dtype=float)
    return GridDensity1D(v * (v.size / total))


def kernel_density_2d(M: np.ndarray, total: float) -> GridDensity2D:
    """Embed a nonnegative matrix as the density (mn/total) * M(ceil(mx), ceil(ny))."""
    if total <= 0:
        raise NonPositiveTotal(f"total must be positive, got {total!r}")
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    return GridDensity2D(M * (m * n / total))


def _check_same_grid(p, q):
    if type(p) is not type(q):
        raise GridMismatch("densities live on different grid kinds")
    if isinstance(p, GridDensity1D):
        if p.m != q.m:
            raise GridMismatch(f"grids differ: {p.m} vs {q.m}")
    else:
        if p.shape != q.shape:
            raise GridMismatch(f"grids differ: {p.shape} vs {q.shape}")


def hellinger(p, q) -> float:
    """sqrt of the cell-measure-weighted sum of (sqrt p - sqrt q)^2."""
    _check_same_grid(p, q)
    diff = np.sqrt(p.values) - np.sqrt(q.values)
    return float(np.sqrt(np.sum(diff * diff) * p.cell_measure))


def total_variation(p, q) -> float:
    """L1 distance between the densities (integral of |p - q|)."""
    _check_same_grid(p, q)
    return float(np.sum(np.abs(p.values - q.values)) * p.cell_measure)


l1_density_distance = total_variation


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; +inf when p is not absolutely continuous."""
    _check_same_grid(p, q)
    pv = p.values
    qv = q.values
    pos = pv > 0
    if np.any(pos & (qv <= 0)):
        return INF
    pp = pv[pos]
    return float(np.sum(pp * np.log(pp / qv[pos])) * p.cell_measure)


def delta_smoothness(margins: MarginPair) -> float:
    """Largest delta with delta*N/m <= r_i <= N/(delta*m) and likewise for c."""
    margins.require_positive()
    r, c, N = margins.r, margins.c, margins.N
    m, n = margins.m, margins.n
    return float(min(
        m * r.min() / N,
        N / (m * r.max()),
        n * c.min() / N,
        N / (n * c.max()),
    ))


def cost_bound_K(problem: ScalingProblem) -> float:
    """K = max |log(r_i c_j ||lam||_1 / (lam_ij N^2))| over all cells."""
    lam = problem.lam
    if (lam <= 0).any():
        raise ZeroEntry("cost bound requires a strictly positive matrix")
    margins = problem.margins
    margins.require_positive()
    ratio = np.outer(margins.r, margins.c) * lam.sum() / (lam * margins.N ** 2)
    return float(np.abs(np.log(ratio)).max())


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def integrate_test(g, d: GridDensity2D) -> float:
    """Integral of g against the density by per-cell tensor Gauss-Legendre.

    Order-4 nodes per cell per axis; g must accept numpy arrays (x, y) of
    equal shape, broadcasting elementwise.
    """
    m, n = d.shape
    # nodes mapped from [-1, 1] into each cell, then tensorized
    x = ((np.arange(m)[:, None] + (_GL_NODES + 1.0) / 2.0) / m).ravel()  # (4m,)
    y = ((np.arange(n)[:, None] + (_GL_NODES + 1.0) / 2.0) / n).ravel()  # (4n,)
    wx = np.tile(_GL_WEIGHTS / 2.0, m)
    wy = np.tile(_GL_WEIGHTS / 2.0, n)
    G = g(x[:, None], y[None, :])  # (4m, 4n)
    cellint = (wx[:, None] * G * wy[None, :]).reshape(m, 4, n, 4).sum(axis=(1, 3))
    return float(np.sum(d.values * cellint) * d.cell_measure)


def _cosine_bump(x, y):
    return np.cos(np.pi * (x - 0.5)) ** 2 * np.cos(np.pi * (y - 0.5)) ** 2


TEST_FUNCTIONS = {
    "constant": (lambda x, y: np.ones(np.broadcast(x, y).shape), 1.0),
    "coordinate_x": (lambda x, y: x * np.ones_like(y), 1.0),
    "coordinate_y": (lambda x, y: y * np.ones_like(x), 1.0),
    "product_xy": (lambda x, y: x * y, 1.0),
    "cosine_bump": (_cosine_bump, 1.0),
}


def lookup_test_function(name: str):
    """Look up (callable, sup-norm) from the registry."""
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise KeyError(
            f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}"
        ) from None

"""B-spline bases, penalized least-squares smoothing, and grid inner products.

Basis functions are evaluated with the Cox-de Boor recurrence on an equally
spaced knot sequence with full endpoint multiplicity. The roughness penalty
integrates products of second derivatives exactly: second derivatives of a
degree-p spline are piecewise polynomials of degree p-2, so Gauss-Legendre
quadrature with p-1 nodes per knot span is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .curves import Grid
from .errors import ConfigError, GridError, RankDeficiencyError


@dataclass(frozen=True)
class BasisSystem:
    """A B-spline basis evaluated on a grid, with its roughness penalty.

    ``design`` is (L, n_basis); ``penalty`` is the n_basis x n_basis matrix of
    integrated second-derivative products.
    """

    grid: Grid
    degree: int
    n_basis: int
    knots: np.ndarray
    design: np.ndarray
    penalty: np.ndarray

    @property
    def interior_knots(self) -> np.ndarray:
        k = self.degree + 1
        return self.knots[k:-k]


def _indicator_columns(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Degree-0 basis: interval indicators, right-closed at the domain end."""
    n_int = knots.size - 1
    B = np.zeros((x.size, n_int))
    for i in range(n_int):
        if knots[i] < knots[i + 1]:
            B[:, i] = (x >= knots[i]) & (x < knots[i + 1])
    at_end = x == knots[-1]
    if np.any(at_end):
        last = max(i for i in range(n_int) if knots[i] < knots[i + 1])
        B[at_end, :] = 0.0
        B[at_end, last] = 1.0
    return B


def _raise_degree(B: np.ndarray, knots: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    """One Cox-de Boor value step from degree p-1 to degree p."""
    n_out = B.shape[1] - 1
    out = np.zeros((B.shape[0], n_out))
    for i in range(n_out):
        d1 = knots[i + p] - knots[i]
        d2 = knots[i + p + 1] - knots[i + 1]
        if d1 > 0:
            out[:, i] += (x - knots[i]) / d1 * B[:, i]
        if d2 > 0:
            out[:, i] += (knots[i + p + 1] - x) / d2 * B[:, i + 1]
    return out


def _derivative_step(B: np.ndarray, knots: np.ndarray, p: int) -> np.ndarray:
    """Derivative recurrence: degree-(p-1) values to degree-p derivatives."""
    n_out = B.shape[1] - 1
    out = np.zeros((B.shape[0], n_out))
    for i in range(n_out):
        d1 = knots[i + p] - knots[i]
        d2 = knots[i + p + 1] - knots[i + 1]
        if d1 > 0:
            out[:, i] += p / d1 * B[:, i]
        if d2 > 0:
            out[:, i] -= p / d2 * B[:, i + 1]
    return out


def _design_matrix(knots: np.ndarray, degree: int, x: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative order) at points ``x``."""
    x = np.asarray(x, dtype=float)
    n_basis = knots.size - degree - 1
    if deriv > degree:
        return np.zeros((x.size, n_basis))
    B = _indicator_columns(knots, x)
    for p in range(1, degree - deriv + 1):
        B = _raise_degree(B, knots, p, x)
    for p in range(degree - deriv + 1, degree + 1):
        B = _derivative_step(B, knots, p)
    return B


def _roughness_matrix(knots: np.ndarray, degree: int) -> np.ndarray:
    """Exact integral of second-derivative products over the knot spans."""
    n_basis = knots.size - degree - 1
    if degree < 2:
        return np.zeros((n_basis, n_basis))
    nodes, gl_weights = np.polynomial.legendre.leggauss(degree - 1)
    P = np.zeros((n_basis, n_basis))
    uniq = np.unique(knots)
    for a, b in zip(uniq[:-1], uniq[1:]):
        half = 0.5 * (b - a)
        xm = 0.5 * (a + b) + half * nodes
        D2 = _design_matrix(knots, degree, xm, deriv=2)
        P += half * D2.T @ (gl_weights[:, None] * D2)
    return 0.5 * (P + P.T)


def build_basis(grid: Grid, n_basis: int = 18, degree: int = 3) -> BasisSystem:
    """Construct a B-spline basis on ``grid``.

    Knots are equally spaced over the grid span with the endpoint knots
    repeated degree + 1 times, giving n_basis - degree - 1 interior knots.
    """
    if degree < 0:
        raise ConfigError("degree must be nonnegative")
    if n_basis < degree + 1:
        raise ConfigError(f"n_basis={n_basis} must be at least degree+1={degree + 1}")
    lo, hi = grid.points[0], grid.points[-1]
    n_interior = n_basis - degree - 1
    breaks = np.linspace(lo, hi, n_interior + 2)
    knots = np.concatenate(
        [np.full(degree + 1, lo), breaks[1:-1], np.full(degree + 1, hi)]
    )
    design = _design_matrix(knots, degree, grid.points)
    penalty = _roughness_matrix(knots, degree)
    return BasisSystem(
        grid=grid,
        degree=degree,
        n_basis=n_basis,
        knots=knots,
        design=design,
        penalty=penalty,
    )


def penalized_smooth(
    values: np.ndarray, basis: BasisSystem, lam: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Penalized least-squares fit of ``values`` in the spline span.

    Minimizes ``||values - design @ c||^2 + lam * c' P c`` and returns
    ``(coefficients, fitted)``. A 1e-12 diagonal jitter is applied when the
    unpenalized system is numerically singular but formally solvable.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (basis.grid.n_points,):
        raise GridError("values must match the basis grid length")
    if lam < 0:
        raise ConfigError("lambda must be nonnegative")
    X = basis.design
    A = X.T @ X + lam * basis.penalty
    rhs = X.T @ values
    try:
        factor = cho_factor(A)
    except LinAlgError:
        if lam == 0 and basis.grid.n_points < basis.n_basis:
            raise RankDeficiencyError(
                f"normal equations singular: {basis.grid.n_points} points for "
                f"{basis.n_basis} basis functions at lambda=0"
            ) from None
        try:
            factor = cho_factor(A + 1e-12 * np.eye(basis.n_basis))
        except LinAlgError:
            raise RankDeficiencyError("normal equations singular") from None
    coefficients = cho_solve(factor, rhs)
    return coefficients, X @ coefficients


def inner_product(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    """Quadrature inner product ``sum_l f(t_l) g(t_l) w_l`` on the grid."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != grid.points.shape or g.shape != grid.points.shape:
        raise GridError("inner_product arguments must match the grid length")
    return float((f * g) @ grid.weights)

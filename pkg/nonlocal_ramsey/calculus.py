"""Discrete nonlocal vector calculus on a midpoint grid.

All integrals are single-level midpoint sums over the grid weights, so the
discrete operators satisfy adjointness and the nonlocal Gauss theorem up to
rounding.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree

from nonlocal_ramsey.errors import ConvergenceError, StructuralError
from nonlocal_ramsey.geometry import Grid
from nonlocal_ramsey.kernel import KernelParams, distance, gamma_from_distance, sign_factor

logger = logging.getLogger(__name__)

DENSE_EIGEN_LIMIT = 64


@dataclass(frozen=True, eq=False)
class PairSet:
    """Ordered pairs (i, j) with |x_i - x_j| <= epsilon, diagonal included.

    Pairs are sorted by (row, col). ``transpose[p]`` is the position of the
    reversed pair of pair ``p``.
    """

    grid: Grid
    params: KernelParams
    rows: np.ndarray
    cols: np.ndarray
    distance: np.ndarray
    gamma_eps: np.ndarray
    gamma_mu: np.ndarray
    alpha: np.ndarray
    transpose: np.ndarray

    @classmethod
    def build(cls, grid: Grid, params: KernelParams) -> "PairSet":
        if params.dim != grid.dim or not np.isclose(params.epsilon, grid.domain.epsilon):
            raise StructuralError("kernel parameters do not match the grid's domain (epsilon or dimension)")
        n = grid.n_points
        tree = cKDTree(grid.points)
        upper = tree.query_pairs(r=params.epsilon * (1 + 1e-9), output_type="ndarray")
        rows = np.concatenate([upper[:, 0], upper[:, 1], np.arange(n)]).astype(np.int64)
        cols = np.concatenate([upper[:, 1], upper[:, 0], np.arange(n)]).astype(np.int64)
        dist = distance(grid.points[rows], grid.points[cols])
        keep = dist <= params.epsilon
        rows, cols, dist = rows[keep], cols[keep], dist[keep]

        order = np.lexsort((cols, rows))
        rows, cols, dist = rows[order], cols[order], dist[order]
        keys = rows * n + cols
        transpose = np.searchsorted(keys, cols * n + rows)

        x = grid.points[rows]
        y = grid.points[cols]
        gamma_eps = gamma_from_distance(params, params.epsilon, dist)
        gamma_mu = gamma_from_distance(params, params.mu, dist)
        alpha = sign_factor(x, y, grid.dim) * np.sqrt(gamma_eps)
        logger.info("pair set: %d pairs over %d points (epsilon=%g)", rows.size, n, params.epsilon)
        return cls(grid=grid, params=params, rows=rows, cols=cols, distance=dist,
                   gamma_eps=gamma_eps, gamma_mu=gamma_mu, alpha=alpha, transpose=transpose)

    @property
    def n_pairs(self) -> int:
        return int(self.rows.size)

    @cached_property
    def col_weights(self) -> np.ndarray:
        return self.grid.weights[self.cols]

    def weighted_matrix(self, values: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix M[i, j] = w_j * values[p] over the pair positions p = (i, j)."""
        n = self.grid.n_points
        return sp.csr_matrix((self.col_weights * values, (self.rows, self.cols)), shape=(n, n))

    @cached_property
    def gamma_eps_matrix(self) -> sp.csr_matrix:
        return self.weighted_matrix(self.gamma_eps)

    @cached_property
    def gamma_mu_matrix(self) -> sp.csr_matrix:
        return self.weighted_matrix(self.gamma_mu)

    @cached_property
    def row_integral(self) -> np.ndarray:
        """Gamma-hat(x) = sum_y w_y Gamma_eps(x, y) for every grid point."""
        return np.asarray(self.gamma_eps_matrix.sum(axis=1)).ravel()

    @cached_property
    def interior_laplacian(self) -> sp.csr_matrix:
        """Matrix of the nonlocal diffusion on constrained fields, interior rows and columns."""
        idx = self.grid.interior_indices
        block = self.gamma_eps_matrix[idx][:, idx]
        return (block - sp.diags(self.row_integral[idx])).tocsr()


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar values on every grid point."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_points,):
            raise StructuralError(f"field has shape {self.values.shape}, grid has {self.grid.n_points} points")

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(np.zeros(grid.n_points), grid)

    @classmethod
    def from_interior(cls, grid: Grid, interior_values: np.ndarray) -> "Field":
        values = np.zeros(grid.n_points)
        values[grid.interior] = interior_values
        return cls(values, grid)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    @property
    def is_constrained(self) -> bool:
        """Discrete volume constraint: exactly zero on every interaction point."""
        return bool(np.all(self.values[~self.grid.interior] == 0.0))


@dataclass(frozen=True, eq=False)
class TwoPointField:
    """Scalar values on the ordered pairs of a PairSet."""

    values: np.ndarray
    pairs: PairSet

    def __post_init__(self) -> None:
        if self.values.shape != (self.pairs.n_pairs,):
            raise StructuralError(f"two-point field has {self.values.shape} values, pair set has {self.pairs.n_pairs}")

    @property
    def grid(self) -> Grid:
        return self.pairs.grid


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """beta * NL restricted to interior points, Dirichlet columns eliminated."""

    matrix: sp.csr_matrix
    beta: float

    def to_coordinate_text(self) -> str:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{coo.row[p]} {coo.col[p]} {float(coo.data[p])!r}" for p in order]
        return "\n".join(lines) + "\n"

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_coordinate_text(), encoding="utf-8")


def assemble_operator(pairs: PairSet, beta: float = 1.0) -> AssembledOperator:
    return AssembledOperator(matrix=(beta * pairs.interior_laplacian).tocsr(), beta=float(beta))


def _require_grid(field_grid: Grid, grid: Grid) -> None:
    if field_grid is not grid:
        raise StructuralError("field and pair set live on different grids")


def nl_divergence(nu: TwoPointField, grid: Grid) -> Field:
    """D(nu)(x) = sum_y w_y (nu(x, y) + nu(y, x)) alpha(x, y)."""
    _require_grid(nu.grid, grid)
    pairs = nu.pairs
    symmetric = nu.values + nu.values[pairs.transpose]
    contributions = pairs.col_weights * symmetric * pairs.alpha
    return Field(np.bincount(pairs.rows, weights=contributions, minlength=grid.n_points), grid)


def nl_adjoint_gradient(u: Field, pairs: PairSet) -> TwoPointField:
    """D*(u)(x, y) = -(u(y) - u(x)) alpha(x, y) on every stored pair."""
    _require_grid(u.grid, pairs.grid)
    values = -(u.values[pairs.cols] - u.values[pairs.rows]) * pairs.alpha
    return TwoPointField(values, pairs)


def nl_diffusion(u: Field, pairs: PairSet, radius: float | None = None) -> Field:
    """NL(u)(x) = sum_y w_y (u(y) - u(x)) Gamma(x, y), evaluated at interior points.

    Interaction points are left at zero. ``radius`` defaults to epsilon and
    may not exceed it.
    """
    _require_grid(u.grid, pairs.grid)
    if radius is None or radius == pairs.params.epsilon:
        kernel = pairs.gamma_eps
    elif radius == pairs.params.mu:
        kernel = pairs.gamma_mu
    elif radius < pairs.params.epsilon:
        kernel = gamma_from_distance(pairs.params, radius, pairs.distance)
    else:
        raise StructuralError("diffusion radius exceeds the pair set's epsilon")
    differences = pairs.col_weights * (u.values[pairs.cols] - u.values[pairs.rows]) * kernel
    out = np.bincount(pairs.rows, weights=differences, minlength=pairs.grid.n_points)
    out[~pairs.grid.interior] = 0.0
    return Field(out, pairs.grid)


def nl_interaction(nu: TwoPointField, grid: Grid) -> np.ndarray:
    """V(nu)(x) = -sum_y w_y (nu(x, y) + nu(y, x)) alpha(x, y) for x in the interaction shell.

    Returns:
        Values ordered as ``grid.interaction_indices``.
    """
    return -nl_divergence(nu, grid).values[~grid.interior]


def l2_norm(u: Field, *, interior_only: bool = False) -> float:
    mask = u.grid.interior if interior_only else slice(None)
    return float(np.sqrt(np.sum(u.grid.weights[mask] * u.values[mask] ** 2)))


def dual_norm_upper_bound(f: Field) -> float:
    """Upper bound ||f||_{L2} of the dual norm on the constrained energy space."""
    return l2_norm(f)


def energy_norm(u: Field, pairs: PairSet) -> float:
    """|||u||| = sqrt(1/2 sum_x sum_y w_x w_y D*(u)(x, y)^2) over the whole grid."""
    grad = nl_adjoint_gradient(u, pairs).values
    weights = pairs.grid.weights
    return float(np.sqrt(0.5 * np.sum(weights[pairs.rows] * pairs.col_weights * grad * grad)))


def bilinear_a(u: Field, v: Field, pairs: PairSet, delta: float, beta: float = 1.0) -> float:
    """a(u, v) = beta/2 sum sum w w D*(u) D*(v) + delta sum_{x in Omega} w u v."""
    du = nl_adjoint_gradient(u, pairs).values
    dv = nl_adjoint_gradient(v, pairs).values
    weights = pairs.grid.weights
    energy = 0.5 * np.sum(weights[pairs.rows] * pairs.col_weights * du * dv)
    mask = pairs.grid.interior
    mass = np.sum(weights[mask] * u.values[mask] * v.values[mask])
    return float(beta * energy + delta * mass)


class EquivalenceConstants(BaseModel):
    """C1 ||u|| <= |||u||| <= C2 ||u|| on constrained fields."""

    model_config = ConfigDict(frozen=True)

    c1: float
    c2: float
    method: Literal["dense", "arpack"]


def _extreme_eigenvalues(gram: sp.csc_matrix, seed: int) -> tuple[float, float, str]:
    n = gram.shape[0]
    if n <= DENSE_EIGEN_LIMIT:
        spectrum = np.linalg.eigvalsh(gram.toarray())
        return float(spectrum[0]), float(spectrum[-1]), "dense"
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        largest = eigsh(gram, k=1, which="LA", v0=v0, tol=0.0, return_eigenvectors=False)
        smallest = eigsh(gram, k=1, sigma=0.0, which="LM", v0=v0, tol=0.0, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise ConvergenceError(f"extreme eigenvalue search did not converge: {exc}") from exc
    return float(smallest[0]), float(largest[0]), "arpack"


def estimate_equivalence_constants(pairs: PairSet, seed: int = 0) -> EquivalenceConstants:
    """Norm equivalence constants from the extreme eigenvalues of the energy Gram matrix.

    With uniform weights, |||u|||^2 / ||u||^2 is the Rayleigh quotient of -L
    (L the interior diffusion matrix), so C1^2 and C2^2 are its smallest and
    largest eigenvalues. Small systems are diagonalized densely; larger ones go
    through ARPACK, with shift-invert at zero for the bottom of the spectrum.
    """
    grid = pairs.grid
    if grid.n_interior == 0:
        raise StructuralError("grid has no interior points")
    gram = (-pairs.interior_laplacian).tocsc()
    smallest, largest, method = _extreme_eigenvalues(gram, seed)
    c1, c2 = float(np.sqrt(smallest)), float(np.sqrt(largest))
    logger.info("norm equivalence (%s): C1=%.6e C2=%.6e", method, c1, c2)
    return EquivalenceConstants(c1=c1, c2=c2, method=method)

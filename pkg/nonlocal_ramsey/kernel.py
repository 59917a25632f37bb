"""Truncated Gaussian kernel Gamma_nu, its antisymmetric root alpha and the kernel property checks."""

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator
from scipy.spatial import cKDTree
from scipy.special import gamma as gamma_function

from nonlocal_ramsey.errors import KernelPropertyError, StructuralError
from nonlocal_ramsey.geometry import Grid, build_grid

logger = logging.getLogger(__name__)


class KernelParams(BaseModel):
    """Kernel parameters.

    The covariance is sigma**2 times the identity, so the quadratic form in the
    Gaussian reduces to |x - y|**2 / sigma**2.
    """

    model_config = ConfigDict(frozen=True)

    sigma: PositiveFloat
    epsilon: PositiveFloat
    mu: PositiveFloat
    dim: Literal[1, 2] = 1

    @model_validator(mode="after")
    def _check_radii(self) -> "KernelParams":
        if not self.mu < self.epsilon:
            raise ValueError(f"mu must satisfy 0 < mu < epsilon (got mu={self.mu}, epsilon={self.epsilon})")
        return self

    @property
    def normalization(self) -> float:
        """(2 pi sigma^2)^(-n/2)."""
        return (2.0 * math.pi * self.sigma**2) ** (-self.dim / 2.0)

    def radius(self, which: Literal["epsilon", "mu"]) -> float:
        return self.epsilon if which == "epsilon" else self.mu


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / float(gamma_function(n / 2.0 + 1.0))


def distance(x, y) -> np.ndarray:
    """Euclidean distance along the last axis; the single distance routine of the package."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if diff.ndim == 0:
        return np.abs(diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _as_points(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., np.newaxis]
    return arr


def gamma_from_distance(params: KernelParams, radius: float, dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    values = params.normalization * np.exp(-(dist * dist) / (2.0 * params.sigma**2))
    return np.where(dist <= radius, values, 0.0)


def gamma(params: KernelParams, radius: float, x, y):
    """Gamma_nu(x, y) = (2 pi sigma^2)^(-n/2) exp(-|x-y|^2 / (2 sigma^2)) on the closed nu-ball."""
    values = gamma_from_distance(params, radius, distance(_as_points(x, params.dim), _as_points(y, params.dim)))
    return float(values) if values.ndim == 0 else values


def sign_factor(x, y, dim: int = 1):
    """Antisymmetric sign: sign(|x| - |y|), ties broken lexicographically, 0 only on x == y."""
    x = _as_points(x, dim)
    y = _as_points(y, dim)
    origin = np.zeros(x.shape[-1])
    s = np.sign(distance(x, origin) - distance(y, origin))
    tie = s == 0
    if np.any(tie):
        xb, yb = np.broadcast_arrays(x, y)
        differs = xb != yb
        # first axis on which the coordinates differ decides the order
        first = np.argmax(differs, axis=-1)
        xf = np.take_along_axis(xb, first[..., np.newaxis], axis=-1)[..., 0]
        yf = np.take_along_axis(yb, first[..., np.newaxis], axis=-1)[..., 0]
        lexical = np.where(np.any(differs, axis=-1), np.where(xf < yf, 1.0, -1.0), 0.0)
        s = np.where(tie, lexical, s)
    return float(s) if np.ndim(s) == 0 else s


def alpha(params: KernelParams, x, y):
    """alpha_eps(x, y) = s(x, y) * sqrt(Gamma_eps(x, y)); antisymmetric in (x, y)."""
    root = np.sqrt(np.asarray(gamma(params, params.epsilon, x, y)))
    values = sign_factor(x, y, params.dim) * root
    return float(values) if np.ndim(values) == 0 else values


class PropertyCheck(BaseModel):
    """One row of the kernel property report."""

    model_config = ConfigDict(populate_by_name=True)

    property: int = Field(..., ge=1, le=5)
    name: str
    witnessed_constant: float
    bound: float
    tolerance: float = 0.0
    passed: bool = Field(..., serialization_alias="pass")

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"kernel property ({self.property}) {self.name}: "
            f"witnessed={self.witnessed_constant:.6e} bound={self.bound:.6e} {status}"
        )


class KernelReport(BaseModel):
    checks: list[PropertyCheck]

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def raise_for_violations(self) -> None:
        for check in self.checks:
            if not check.passed:
                raise KernelPropertyError(check.property, check.name, check.witnessed_constant, check.bound)

    def to_json_payload(self) -> list[dict]:
        return [
            {
                "property": c.property,
                "witnessed_constant": c.witnessed_constant,
                "bound": c.bound,
                "pass": c.passed,
            }
            for c in self.checks
        ]


def _pairs_within(grid: Grid, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ordered pairs (i, j), i in the interior, with their distances, searched up to ``radius``."""
    tree = cKDTree(grid.points)
    upper = tree.query_pairs(r=radius * (1 + 1e-9), output_type="ndarray")
    i = np.concatenate([upper[:, 0], upper[:, 1], np.arange(grid.n_points)])
    j = np.concatenate([upper[:, 1], upper[:, 0], np.arange(grid.n_points)])
    keep = grid.interior[i]
    i, j = i[keep], j[keep]
    return i, j, distance(grid.points[i], grid.points[j])


def _row_integrals(grid: Grid, params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    """Per interior point: quadrature of Gamma_eps and of Gamma_eps^2 over the grid."""
    i, j, dist = _pairs_within(grid, params.epsilon)
    values = gamma_from_distance(params, params.epsilon, dist) * grid.weights[j]
    first = np.bincount(i, weights=values, minlength=grid.n_points)[grid.interior]
    values_sq = gamma_from_distance(params, params.epsilon, dist) ** 2 * grid.weights[j]
    second = np.bincount(i, weights=values_sq, minlength=grid.n_points)[grid.interior]
    return first, second


def verify_kernel_properties(params: KernelParams, grid: Grid, *, strict: bool = True) -> KernelReport:
    """Witness the five kernel properties on the grid.

    Quadrature-based witnesses (properties 4 and 5) are compared with their
    bounds up to a tolerance measured as the change of the witness between the
    grid and its refinement at h/2.

    Args:
        params: Kernel parameters; epsilon and dim must match the grid's domain.
        grid: Grid built from a compatible domain.
        strict: Raise on the first violated property instead of only reporting it.

    Returns:
        KernelReport with one PropertyCheck per property.

    Raises:
        StructuralError: kernel and grid disagree on epsilon or dimension.
        KernelPropertyError: a property failed and ``strict`` is set.
    """
    if params.dim != grid.dim or not math.isclose(params.epsilon, grid.domain.epsilon):
        raise StructuralError("kernel parameters do not match the grid's domain (epsilon or dimension)")

    n = params.dim
    eps = params.epsilon
    c_n = unit_ball_volume(n)

    i, j, dist = _pairs_within(grid, 1.5 * eps)
    values = gamma_from_distance(params, eps, dist)
    inside = dist <= eps

    witnessed_1 = float(values[inside].min())
    check_1 = PropertyCheck(property=1, name="nonnegative on the epsilon-ball",
                            witnessed_constant=witnessed_1, bound=0.0, passed=witnessed_1 >= 0.0)

    half = dist <= eps / 2.0
    witnessed_0 = float(values[half].min())
    bound_0 = params.normalization * math.exp(-((eps / 2.0) ** 2) / params.sigma**2)
    check_2 = PropertyCheck(property=2, name="gamma_0 lower bound on the epsilon/2-ball",
                            witnessed_constant=witnessed_0, bound=bound_0,
                            passed=witnessed_0 >= bound_0 and witnessed_0 > 0.0)

    outside = ~inside
    witnessed_3 = float(np.abs(values[outside]).max()) if np.any(outside) else 0.0
    check_3 = PropertyCheck(property=3, name="zero beyond epsilon",
                            witnessed_constant=witnessed_3, bound=0.0, passed=witnessed_3 == 0.0)

    integral, integral_sq = _row_integrals(grid, params)
    refined = build_grid(grid.domain, grid.spacing / 2.0, max_points=8 * grid.n_points)
    integral_fine, integral_sq_fine = _row_integrals(refined, params)

    gamma_1 = float(integral.min())
    tol_1 = abs(gamma_1 - float(integral_fine.min()))
    bound_1 = c_n * eps**n * params.normalization * math.exp(-(eps**2) / params.sigma**2)
    check_4 = PropertyCheck(property=4, name="gamma_1 lower bound of the row integral",
                            witnessed_constant=gamma_1, bound=bound_1, tolerance=tol_1,
                            passed=gamma_1 > 0.0 and gamma_1 >= bound_1 - tol_1)

    gamma_2_sq = float(integral_sq.max())
    tol_2 = abs(gamma_2_sq - float(integral_sq_fine.max()))
    bound_2 = c_n * eps**n / (2.0 * math.pi * params.sigma**2) ** n
    check_5 = PropertyCheck(property=5, name="gamma_2^2 upper bound of the squared row integral",
                            witnessed_constant=gamma_2_sq, bound=bound_2, tolerance=tol_2,
                            passed=gamma_2_sq <= bound_2 + tol_2)

    report = KernelReport(checks=[check_1, check_2, check_3, check_4, check_5])
    logger.info("kernel properties: %s", "all passed" if report.all_passed else "violations found")
    if strict:
        report.raise_for_violations()
    return report

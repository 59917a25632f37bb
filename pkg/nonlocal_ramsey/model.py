"""Economic ingredients of the spatial Ramsey model: production, utility, productivity and the objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, NonNegativeFloat, PositiveFloat

from nonlocal_ramsey.calculus import Field, PairSet
from nonlocal_ramsey.errors import ConfigError, StructuralError
from nonlocal_ramsey.geometry import Grid
from nonlocal_ramsey.serialization import read_field_csv

if TYPE_CHECKING:
    from nonlocal_ramsey.control import ControlTrajectory
    from nonlocal_ramsey.solver import StateTrajectory

logger = logging.getLogger(__name__)


class ModelParams(BaseModel):
    """Economic and time-horizon parameters."""

    model_config = ConfigDict(frozen=True)

    beta: NonNegativeFloat = 1.0
    delta: NonNegativeFloat = 0.05
    tau: NonNegativeFloat = 0.03
    space_discount: NonNegativeFloat = 0.0
    rho: PositiveFloat = 1.0
    xi: PositiveFloat = 1.0
    T: PositiveFloat = 1.0
    Mp: PositiveFloat = 1.0
    lambda_p: PositiveFloat = 1.0
    theta: float = PydanticField(0.5, gt=0.0, lt=1.0)
    eta_u: PositiveFloat = 0.01

    @property
    def production_lipschitz(self) -> float:
        """L_p = Mp * lambda_p."""
        return self.Mp * self.lambda_p


@dataclass(frozen=True, eq=False)
class ProductivityData:
    """Initial productivity A0 and terminal capital target kT."""

    A0: Field
    kT: Field

    def __post_init__(self) -> None:
        if self.A0.grid is not self.kT.grid:
            raise StructuralError("A0 and kT live on different grids")
        if np.any(self.A0.values < 0.0):
            raise ConfigError("a0: productivity must be nonnegative")
        if not self.A0.is_constrained:
            raise ConfigError("a0: productivity must vanish on the interaction domain")

    @property
    def grid(self) -> Grid:
        return self.A0.grid

    @property
    def a0_sup(self) -> float:
        return float(np.max(np.abs(self.A0.values)))


def production(k, params: ModelParams):
    """p(k) = Mp (1 - exp(-lambda_p max(k, 0)))."""
    values = params.Mp * -np.expm1(-params.lambda_p * np.maximum(k, 0.0))
    return float(values) if np.ndim(values) == 0 else values


def nominal(k):
    values = np.maximum(k, 0.0)
    return float(values) if np.ndim(values) == 0 else values


def utility(c, params: ModelParams):
    """Shifted CRRA utility ((c + eta)^(1-theta) - eta^(1-theta)) / (1 - theta), U(0) = 0."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0.0):
        raise ConfigError("utility is defined for nonnegative consumption only")
    power = 1.0 - params.theta
    values = ((c + params.eta_u) ** power - params.eta_u**power) / power
    return float(values) if values.ndim == 0 else values


def marginal_utility(c, params: ModelParams):
    values = (np.asarray(c, dtype=float) + params.eta_u) ** (-params.theta)
    return float(values) if values.ndim == 0 else values


def phi_integral(k: Field, pairs: PairSet, radius: Literal["epsilon", "mu"] = "epsilon") -> Field:
    """Phi_nu(k)(x) = sum_y w_y phi(k(y)) Gamma_nu(x, y) for x in Omega; zero on the interaction points."""
    matrix = pairs.gamma_eps_matrix if radius == "epsilon" else pairs.gamma_mu_matrix
    values = matrix @ nominal(k.values)
    values[~k.grid.interior] = 0.0
    return Field(values, k.grid)


def productivity_fraction(k: Field, pairs: PairSet, params: ModelParams) -> np.ndarray:
    """Phi_mu / (Phi_eps + xi) on every grid point; always in [0, 1]."""
    phi_k = nominal(k.values)
    phi_mu = pairs.gamma_mu_matrix @ phi_k
    phi_eps = pairs.gamma_eps_matrix @ phi_k
    return phi_mu / (phi_eps + params.xi)


def productivity_production(k: Field, t: float, data: ProductivityData, pairs: PairSet,
                            params: ModelParams) -> Field:
    """P(k)(x, t) = A0(x) exp(t Phi_mu/(Phi_eps + xi)) p(k(x)), zero on the interaction domain."""
    fraction = productivity_fraction(k, pairs, params)
    values = data.A0.values * np.exp(fraction * t) * production(k.values, params)
    values[~k.grid.interior] = 0.0
    return Field(values, k.grid)


def discount_weights(grid: Grid, times: np.ndarray, params: ModelParams) -> np.ndarray:
    """exp(-tau t_m - space_discount |x|^2) on the interior points, shape (len(times), n_interior)."""
    x = grid.points[grid.interior]
    spatial = np.exp(-params.space_discount * np.sum(x * x, axis=1))
    return np.exp(-params.tau * np.asarray(times))[:, np.newaxis] * spatial[np.newaxis, :]


class ObjectiveTerms(BaseModel):
    model_config = ConfigDict(frozen=True)

    utility_term: float
    terminal_term: float

    @property
    def total(self) -> float:
        return self.utility_term + self.terminal_term


def objective_terms(k: StateTrajectory, c: ControlTrajectory, data: ProductivityData,
                    params: ModelParams) -> ObjectiveTerms:
    """Both parts of J: left-endpoint discounted utility and the terminal penalty."""
    grid = k.grid
    if c.grid is not grid or data.grid is not grid:
        raise StructuralError("state, control and data live on different grids")
    if c.n_steps != k.n_steps or not math.isclose(c.dt, k.dt):
        raise StructuralError(f"control has {c.n_steps} steps of {c.dt}, state has {k.n_steps} of {k.dt}")
    weights = grid.weights[grid.interior]
    times = k.times[:-1]
    discount = discount_weights(grid, times, params)
    utility_term = -k.dt * float(np.sum(weights * utility(c.values, params) * discount))
    gap = k.values[-1, grid.interior] - data.kT.values[grid.interior]
    terminal_term = float(np.sum(weights * gap * gap)) / (2.0 * params.rho)
    return ObjectiveTerms(utility_term=utility_term, terminal_term=terminal_term)


def objective(k: StateTrajectory, c: ControlTrajectory, data: ProductivityData, params: ModelParams) -> float:
    return objective_terms(k, c, data, params).total


def kernel_pair_norm(pairs: PairSet, radius: Literal["epsilon", "mu"]) -> float:
    """Discrete L2(Omega x (Omega u Omega_I)) norm of Gamma_nu."""
    values = pairs.gamma_eps if radius == "epsilon" else pairs.gamma_mu
    rows_interior = pairs.grid.interior[pairs.rows]
    w = pairs.grid.weights
    terms = w[pairs.rows] * pairs.col_weights * values * values
    return float(np.sqrt(np.sum(terms[rows_interior])))


def lipschitz_constant_K(pairs: PairSet, params: ModelParams) -> float:
    """K = (1/xi)(L_exp L_phi |Gamma_eps| + 2 L_exp L_phi |Gamma_mu|) with L_exp = e, L_phi = 1."""
    return (math.e * kernel_pair_norm(pairs, "epsilon") + 2.0 * math.e * kernel_pair_norm(pairs, "mu")) / params.xi


def lipschitz_bound(s: float, data: ProductivityData, pairs: PairSet, params: ModelParams) -> float:
    """L(s) = |A0|_inf (L_p e^s + Mp K s), Lipschitz constant of P(., s) for s <= 1."""
    K = lipschitz_constant_K(pairs, params)
    return data.a0_sup * (params.production_lipschitz * math.exp(s) + params.Mp * K * s)


def constant_profile(grid: Grid, value: float) -> Field:
    return Field.from_interior(grid, np.full(grid.n_interior, float(value)))


def gaussian_bump(grid: Grid, amplitude: float, width: float) -> Field:
    """amplitude * exp(-|x - center|^2 / width^2) on Omega, centred in the box."""
    if not width > 0:
        raise ConfigError(f"gaussian width must be positive (got {width})")
    center = (np.asarray(grid.domain.lower) + np.asarray(grid.domain.upper)) / 2.0
    offset = grid.points[grid.interior] - center
    return Field.from_interior(grid, amplitude * np.exp(-np.sum(offset * offset, axis=1) / width**2))


def build_profile(spec: str, grid: Grid, *, key: str = "profile") -> Field:
    """Build a Field from ``constant <v>``, ``gaussian <amplitude> <width>`` or ``file <path.csv>``."""
    parts = spec.split()
    if not parts:
        raise ConfigError(f"{key}: empty profile")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "constant" and len(args) == 1:
            return constant_profile(grid, float(args[0]))
        if kind == "gaussian" and len(args) == 2:
            return gaussian_bump(grid, float(args[0]), float(args[1]))
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    if kind == "file" and len(args) == 1:
        logger.info("%s: reading profile from %s", key, args[0])
        return read_field_csv(Path(args[0]), grid)
    raise ConfigError(f"{key}: expected 'constant <v>', 'gaussian <amplitude> <width>' or 'file <path>' (got {spec!r})")

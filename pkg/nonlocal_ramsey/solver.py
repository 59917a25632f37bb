"""Capital accumulation equation: implicit Euler steps inside a windowed Picard iteration.

The fixed-point map freezes the productivity-production term at the previous
iterate and time-steps the linear part

    (I/dt - beta NL + delta I) k_{m+1} = k_m / dt + P(v_{m+1}, t_{m+1}) - c_m

on the interior points, with k = 0 on the interaction domain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, PositiveFloat, PositiveInt
from scipy.integrate import cumulative_trapezoid, quad
from scipy.sparse.linalg import cg

from nonlocal_ramsey import serialization
from nonlocal_ramsey.calculus import (
    EquivalenceConstants,
    Field,
    PairSet,
    energy_norm,
    estimate_equivalence_constants,
    l2_norm,
)
from nonlocal_ramsey.errors import ConfigError, ConvergenceError, StructuralError
from nonlocal_ramsey.geometry import Grid
from nonlocal_ramsey.model import ModelParams, ProductivityData, lipschitz_bound, productivity_production

if TYPE_CHECKING:
    from nonlocal_ramsey.control import ControlTrajectory

logger = logging.getLogger(__name__)

MIN_ITERATIONS_BEFORE_HALVING = 3
APRIORI_SLACK = 1e-9


class SolverSettings(BaseModel):
    """Time discretization and iteration tolerances. ``window`` defaults to T/4."""

    model_config = ConfigDict(frozen=True)

    steps: PositiveInt = 20
    window: PositiveFloat | None = None
    picard_tol: PositiveFloat = 1e-10
    picard_max_iter: PositiveInt = 50
    cg_rtol: PositiveFloat = 1e-10
    cg_max_iter: PositiveInt | None = None
    nonnegativity_tol: NonNegativeFloat = 0.0


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """k(x, t_m) for m = 0..M on every grid point, shape (M + 1, n_points)."""

    values: np.ndarray
    dt: float
    grid: Grid

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_points:
            raise StructuralError(f"trajectory shape {self.values.shape} does not match {self.grid.n_points} points")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def field(self, m: int) -> Field:
        return Field(self.values[m], self.grid)

    @property
    def final(self) -> Field:
        return self.field(self.n_steps)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[:, self.grid.interior]

    def to_csv(self, path: Path) -> None:
        serialization.write_time_series_csv(path, self.grid, self.times, self.values, value_column="k")

    @classmethod
    def from_csv(cls, path: Path, grid: Grid) -> "StateTrajectory":
        times, values = serialization.read_time_series_csv(path, grid, value_column="k")
        dt = float(times[1] - times[0]) if times.size > 1 else 0.0
        return cls(values, dt, grid)


class WindowReport(BaseModel):
    start_step: int
    end_step: int
    start_time: float
    end_time: float
    iterations: int
    distances: list[float]
    contraction_factors: list[float]
    contraction_estimate: float
    converged: bool

    @property
    def max_contraction(self) -> float | None:
        return max(self.contraction_factors) if self.contraction_factors else None


class PicardReport(BaseModel):
    windows: list[WindowReport] = []
    halvings: int = 0
    min_value: float = 0.0
    nonnegativity_violated: bool = False

    @property
    def iterations(self) -> int:
        return sum(w.iterations for w in self.windows)

    @property
    def converged(self) -> bool:
        return bool(self.windows) and all(w.converged for w in self.windows)

    def summary_line(self) -> str:
        factors = [w.max_contraction for w in self.windows if w.max_contraction is not None]
        q = max(factors) if factors else 0.0
        status = "PASS" if self.converged and q < 1.0 else "FAIL"
        return f"picard contraction: witnessed={q:.6e} bound={1.0:.6e} {status}"


def system_matrix(pairs: PairSet, params: ModelParams, dt: float) -> sp.csr_matrix:
    """(1/dt + delta) I - beta L on the interior points."""
    n = pairs.grid.n_interior
    return (sp.identity(n, format="csr") * (1.0 / dt + params.delta) - params.beta * pairs.interior_laplacian).tocsr()


def _cg_solve(matrix: sp.spmatrix, rhs: np.ndarray, *, rtol: float, maxiter: int | None,
              x0: np.ndarray | None = None) -> np.ndarray:
    solution, info = cg(matrix, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        rhs_norm = np.linalg.norm(rhs)
        residual = float(np.linalg.norm(rhs - matrix @ solution) / (rhs_norm if rhs_norm > 0 else 1.0))
        raise ConvergenceError(f"conjugate gradient stopped after {info} iterations", residual=residual)
    return solution


def linear_step(k_prev: Field, source: Field, dt: float, params: ModelParams, pairs: PairSet,
                *, rtol: float = 1e-10, maxiter: int | None = None) -> Field:
    """One implicit Euler step of the linear part with the interior ``source`` on the right-hand side."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive (got {dt})")
    grid = pairs.grid
    if k_prev.grid is not grid or source.grid is not grid:
        raise StructuralError("fields and pair set live on different grids")
    rhs = k_prev.interior_values / dt + source.interior_values
    solution = _cg_solve(system_matrix(pairs, params, dt), rhs, rtol=rtol, maxiter=maxiter,
                         x0=k_prev.interior_values)
    return Field.from_interior(grid, solution)


def _control_values(c: ControlTrajectory | np.ndarray, n_steps: int, n_interior: int) -> np.ndarray:
    values = np.asarray(getattr(c, "values", c), dtype=float)
    if values.shape != (n_steps, n_interior):
        raise StructuralError(f"control has shape {values.shape}, expected {(n_steps, n_interior)}")
    return values


class StateProblem:
    """The discretized state equation for one grid, kernel, model and time discretization.

    Holds the implicit Euler matrix so repeated solves (optimizer probes,
    Picard sweeps) share one assembly.
    """

    def __init__(self, pairs: PairSet, params: ModelParams, data: ProductivityData, settings: SolverSettings):
        if data.grid is not pairs.grid:
            raise StructuralError("productivity data and pair set live on different grids")
        self.pairs = pairs
        self.params = params
        self.data = data
        self.settings = settings
        self._estimates: dict[int, float] = {}

    @property
    def grid(self) -> Grid:
        return self.pairs.grid

    @property
    def n_steps(self) -> int:
        return self.settings.steps

    @property
    def dt(self) -> float:
        return self.params.T / self.settings.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return system_matrix(self.pairs, self.params, self.dt)

    @cached_property
    def equivalence_constants(self) -> EquivalenceConstants:
        return estimate_equivalence_constants(self.pairs)

    def productivity(self, k_interior: np.ndarray, t: float) -> np.ndarray:
        """P on the interior points for an interior-valued state."""
        field = Field.from_interior(self.grid, k_interior)
        return productivity_production(field, t, self.data, self.pairs, self.params).interior_values

    def energy_sq(self, u_interior: np.ndarray) -> np.ndarray:
        """|||u|||^2 of constrained fields given by their interior values (last axis)."""
        laplacian = self.pairs.interior_laplacian
        w = self.grid.cell_volume
        u = np.atleast_2d(u_interior)
        return w * np.einsum("ij,ij->i", u, -(laplacian @ u.T).T)

    def _sweep(self, start: np.ndarray, frozen: np.ndarray, controls: np.ndarray, m0: int) -> np.ndarray:
        """Apply the fixed-point map on one window; ``frozen`` holds the iterate at nodes m0..m1."""
        steps = controls.shape[0]
        out = np.empty((steps + 1, start.size))
        out[0] = start
        for s in range(steps):
            t_next = (m0 + s + 1) * self.dt
            rhs = out[s] / self.dt + self.productivity(frozen[s + 1], t_next) - controls[s]
            out[s + 1] = _cg_solve(self.matrix, rhs, rtol=self.settings.cg_rtol,
                                   maxiter=self.settings.cg_max_iter, x0=frozen[s + 1])
        return out

    def window_steps(self) -> int:
        window = self.settings.window if self.settings.window is not None else self.params.T / 4.0
        return max(1, round(window / self.dt))

    def contraction_estimate(self, window: float) -> float:
        return contraction_estimate(window, self.data, self.pairs, self.params, self.equivalence_constants)

    def _window_estimate(self, steps: int) -> float:
        if steps not in self._estimates:
            self._estimates[steps] = self.contraction_estimate(steps * self.dt)
        return self._estimates[steps]

    def solve(self, k0: Field, c: ControlTrajectory | np.ndarray) -> tuple[StateTrajectory, PicardReport]:
        """Windowed Picard iteration; windows halve when the measured contraction fails."""
        grid = self.grid
        if k0.grid is not grid:
            raise StructuralError("initial state and pair set live on different grids")
        if not k0.is_constrained:
            raise ConfigError("k0 must vanish on the interaction domain")
        if np.any(k0.values < 0.0):
            raise ConfigError("k0 must be nonnegative on the domain")
        M = self.n_steps
        controls = _control_values(c, M, grid.n_interior)
        tol = self.settings.picard_tol
        max_iter = self.settings.picard_max_iter

        state = np.zeros((M + 1, grid.n_interior))
        state[0] = k0.interior_values
        report = PicardReport()
        width = self.window_steps()
        m0 = 0
        while m0 < M:
            m1 = min(M, m0 + width)
            window_report, iterate = self._solve_window(state[m0], controls[m0:m1], m0, tol, max_iter)
            if not window_report.converged:
                if width == 1:
                    raise ConvergenceError(
                        f"picard iteration did not converge on the minimal window [{m0 * self.dt}, {m1 * self.dt}]",
                        residual=window_report.distances[-1] if window_report.distances else None,
                        report=report.model_copy(update={"windows": [*report.windows, window_report]}),
                    )
                width = max(1, width // 2)
                report.halvings += 1
                logger.warning("picard window at t=%g did not contract, halving to %d step(s)", m0 * self.dt, width)
                continue
            state[m0 + 1:m1 + 1] = iterate[1:]
            report.windows.append(window_report)
            logger.info("window [%g, %g] converged in %d iteration(s)", m0 * self.dt, m1 * self.dt,
                        window_report.iterations)
            m0 = m1

        values = np.zeros((M + 1, grid.n_points))
        values[:, grid.interior] = state
        report.min_value = float(state.min()) if state.size else 0.0
        if report.min_value < -self.settings.nonnegativity_tol:
            report.nonnegativity_violated = True
            logger.warning("capital became negative: min k = %.6e", report.min_value)
        return StateTrajectory(values, self.dt, grid), report

    def _solve_window(self, start: np.ndarray, controls: np.ndarray, m0: int, tol: float,
                      max_iter: int) -> tuple[WindowReport, np.ndarray]:
        steps = controls.shape[0]
        iterate = np.repeat(start[np.newaxis, :], steps + 1, axis=0)
        distances: list[float] = []
        factors: list[float] = []
        # below this floor distances are dominated by the inexact linear solves
        noise = max(1e-13, 10.0 * self.settings.cg_rtol)
        converged = False
        for iteration in range(1, max_iter + 1):
            new = self._sweep(start, iterate, controls, m0)
            d = float(np.sqrt(self.energy_sq(new - iterate).max()))
            scale = float(np.sqrt(self.energy_sq(new).max()))
            iterate = new
            if distances and distances[-1] > noise * (1.0 + scale):
                factors.append(d / distances[-1])
            distances.append(d)
            logger.debug("window at step %d, iteration %d: distance %.3e", m0, iteration, d)
            if d < tol:
                converged = True
                break
            if iteration >= MIN_ITERATIONS_BEFORE_HALVING and factors and factors[-1] >= 1.0:
                break
        window = WindowReport(
            start_step=m0,
            end_step=m0 + steps,
            start_time=m0 * self.dt,
            end_time=(m0 + steps) * self.dt,
            iterations=len(distances),
            distances=distances,
            contraction_factors=factors,
            contraction_estimate=self._window_estimate(steps),
            converged=converged,
        )
        return window, iterate


def picard_solve(k0: Field, c: ControlTrajectory | np.ndarray, data: ProductivityData, params: ModelParams,
                 pairs: PairSet, settings: SolverSettings | None = None) -> tuple[StateTrajectory, PicardReport]:
    return StateProblem(pairs, params, data, settings or SolverSettings()).solve(k0, c)


def pointwise_ode_oracle(k: StateTrajectory, c: ControlTrajectory | np.ndarray, data: ProductivityData,
                         params: ModelParams, pairs: PairSet, x: int) -> np.ndarray:
    """Variation-of-constants reconstruction of k(x, .) from the solver's own neighbourhood values.

    Args:
        x: Grid index of an interior point.

    Returns:
        k_bar(x, t_m) for m = 0..M.
    """
    grid = k.grid
    if not grid.interior[x]:
        raise StructuralError(f"grid point {x} is not an interior point")
    controls = _control_values(c, k.n_steps, grid.n_interior)
    position = int(np.searchsorted(grid.interior_indices, x))
    times = k.times

    row = pairs.gamma_eps_matrix[x]
    gamma_hat = float(row.sum())
    rate = params.beta * gamma_hat + params.delta
    neighbour_sum = np.asarray(k.values @ row.toarray().ravel())
    production_x = np.array([
        productivity_production(k.field(m), times[m], data, pairs, params).values[x] for m in range(k.n_steps + 1)
    ])
    # c_m holds on [t_m, t_{m+1}); the last node reuses c_{M-1}
    c_nodes = np.append(controls[:, position], controls[-1, position] if k.n_steps else 0.0)
    g = params.beta * neighbour_sum + production_x - c_nodes
    integral = cumulative_trapezoid(g * np.exp(times * rate), times, initial=0.0)
    return np.exp(-times * rate) * (k.values[0, x] + integral)


class OracleReport(BaseModel):
    points: list[int]
    max_deviation: float


def oracle_deviation(k: StateTrajectory, c: ControlTrajectory | np.ndarray, data: ProductivityData,
                     params: ModelParams, pairs: PairSet, points: list[int]) -> OracleReport:
    deviation = 0.0
    for x in points:
        reconstructed = pointwise_ode_oracle(k, c, data, params, pairs, x)
        deviation = max(deviation, float(np.max(np.abs(reconstructed - k.values[:, x]))))
    return OracleReport(points=[int(p) for p in points], max_deviation=deviation)


class AprioriConstants(BaseModel):
    """Data of the a-priori constant C_inf."""

    model_config = ConfigDict(frozen=True)

    c1: PositiveFloat
    c2: PositiveFloat
    a0_sup: NonNegativeFloat
    Mp: PositiveFloat
    volume: PositiveFloat
    beta: NonNegativeFloat
    delta: NonNegativeFloat
    T: PositiveFloat
    operator_norm: NonNegativeFloat

    @classmethod
    def from_problem(cls, problem: StateProblem) -> "AprioriConstants":
        constants = problem.equivalence_constants
        params = problem.params
        return cls(
            c1=constants.c1,
            c2=constants.c2,
            a0_sup=problem.data.a0_sup,
            Mp=params.Mp,
            volume=problem.grid.interior_volume(),
            beta=params.beta,
            delta=params.delta,
            T=params.T,
            # Gershgorin bound of the interior diffusion matrix
            operator_norm=2.0 * float(problem.pairs.row_integral[problem.grid.interior].max()),
        )

    @property
    def c_infinity(self) -> float:
        if not self.beta > 0:
            raise ConfigError("the a-priori estimate needs beta > 0")
        a = self.a0_sup * self.Mp * math.sqrt(self.volume)
        growth = self.T * math.exp(2.0 * self.T)
        b1 = max(1.0 / self.beta, 2.0 / (self.beta * self.c1) ** 2, 2.0 * a * a * growth / (self.beta * self.c1) ** 2)
        stiffness = 3.0 * (self.beta * self.operator_norm + self.delta) ** 2 / self.c1**2
        return math.sqrt(b1 * (1.0 + stiffness) + 3.0 * max(a * a * growth, 1.0))


class AprioriReport(BaseModel):
    lhs: float
    c_infinity: float
    data_norm: float
    rhs: float
    passed: bool

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"a-priori estimate: witnessed={self.lhs:.6e} bound={self.rhs:.6e} {status}"


def apriori_check(k: StateTrajectory, c: ControlTrajectory | np.ndarray, k0: Field, pairs: PairSet,
                  constants: AprioriConstants) -> AprioriReport:
    """Discrete H1(0, T; V_c) norm of k against C_inf (|c| + |k0| + 1)."""
    grid = k.grid
    controls = _control_values(c, k.n_steps, grid.n_interior)
    dt = k.dt
    w = grid.weights[grid.interior]

    energy = sum(dt * energy_norm(k.field(m), pairs) ** 2 for m in range(1, k.n_steps + 1))
    rates = np.diff(k.interior_values, axis=0) / dt
    time_derivative = dt * float(np.sum(w * rates * rates))
    lhs = math.sqrt(energy + time_derivative)

    control_norm = math.sqrt(dt * float(np.sum(w * controls * controls)))
    data_norm = control_norm + l2_norm(k0, interior_only=True) + 1.0
    c_inf = constants.c_infinity
    rhs = c_inf * data_norm
    return AprioriReport(lhs=lhs, c_infinity=c_inf, data_norm=data_norm, rhs=rhs,
                         passed=lhs <= rhs * (1.0 + APRIORI_SLACK))


def contraction_estimate(window: float, data: ProductivityData, pairs: PairSet, params: ModelParams,
                         constants: EquivalenceConstants) -> float:
    """C(T*) = 1/(2 beta_Y C1) int_0^T* L(s)^2 ds, beta_Y at the middle of its admissible interval."""
    beta_young = 2.0 * constants.c1 * (1.0 + 1.0 / (4.0 * constants.c2))
    integral, _ = quad(lambda s: lipschitz_bound(s, data, pairs, params) ** 2, 0.0, window)
    return integral / (2.0 * beta_young * constants.c1)


def vinfty_norm(k: StateTrajectory, pairs: PairSet) -> float:
    """max_m |||k_m||| + max |k|."""
    energies = [energy_norm(k.field(m), pairs) for m in range(k.n_steps + 1)]
    return float(max(energies) + np.max(np.abs(k.values)))

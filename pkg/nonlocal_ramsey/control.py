"""Consumption controls: reduced objective, discrete adjoint gradient and projected gradient descent."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field as PydanticField, PositiveFloat, PositiveInt
from scipy.sparse.linalg import spsolve

from nonlocal_ramsey import serialization
from nonlocal_ramsey.calculus import Field
from nonlocal_ramsey.errors import ConfigError, LineSearchError, StructuralError
from nonlocal_ramsey.geometry import Grid
from nonlocal_ramsey.model import ObjectiveTerms, discount_weights, marginal_utility, objective_terms
from nonlocal_ramsey.solver import PicardReport, StateProblem, StateTrajectory

logger = logging.getLogger(__name__)

JACOBIAN_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Consumption c(x, t_m) on the interior points, shape (M, n_interior).

    ``values[m]`` acts on [t_m, t_{m+1}). Every entry lies in [c_min, c_max].
    """

    values: np.ndarray
    dt: float
    grid: Grid
    c_min: float = 0.0
    c_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.c_min <= self.c_max < math.inf:
            raise ConfigError(
                f"control bounds must satisfy 0 <= c_min <= c_max < inf (got [{self.c_min}, {self.c_max}])")
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_interior:
            raise StructuralError(
                f"control shape {self.values.shape} does not match {self.grid.n_interior} interior points")
        if np.any(self.values < self.c_min) or np.any(self.values > self.c_max):
            raise ConfigError("control leaves the admissible box")

    @classmethod
    def constant(cls, grid: Grid, n_steps: int, dt: float, value: float, *, c_min: float = 0.0,
                 c_max: float = 1.0) -> "ControlTrajectory":
        return cls(np.full((n_steps, grid.n_interior), float(value)), dt, grid, c_min, c_max)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps)

    def project(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.c_min, self.c_max)

    def with_values(self, values: np.ndarray) -> "ControlTrajectory":
        return ControlTrajectory(self.project(values), self.dt, self.grid, self.c_min, self.c_max)

    def active_fraction(self) -> float:
        active = (self.values <= self.c_min) | (self.values >= self.c_max)
        return float(np.mean(active)) if active.size else 0.0

    def to_csv(self, path: Path) -> None:
        serialization.write_time_series_csv(path, self.grid, self.times, self.values, value_column="c",
                                            indices=self.grid.interior_indices)

    @classmethod
    def from_csv(cls, path: Path, grid: Grid, *, c_min: float = 0.0, c_max: float = 1.0) -> "ControlTrajectory":
        times, values = serialization.read_time_series_csv(path, grid, value_column="c",
                                                           indices=grid.interior_indices)
        dt = float(times[1] - times[0]) if times.size > 1 else 0.0
        return cls(values, dt, grid, c_min, c_max)


class StepRule(BaseModel):
    """Initial trial step, growth after an accepted step, Armijo constant and halving budget."""

    model_config = ConfigDict(frozen=True)

    initial: PositiveFloat = 1.0
    growth: float = PydanticField(2.0, ge=1.0)
    armijo: float = PydanticField(1e-4, gt=0.0, lt=1.0)
    max_halvings: PositiveInt = 40


class TraceEntry(BaseModel):
    iteration: int
    objective: float
    utility_term: float
    terminal_term: float
    gradient_norm: float
    step: float
    active_fraction: float


class OptimizationTrace(BaseModel):
    entries: list[TraceEntry] = []
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(0, len(self.entries) - 1)


@dataclass(frozen=True)
class Evaluation:
    """Forward solve at one control: state, Picard report and both objective terms."""

    control: ControlTrajectory
    state: StateTrajectory
    report: PicardReport
    terms: ObjectiveTerms

    @property
    def value(self) -> float:
        return self.terms.total


def _check_time_grid(c: ControlTrajectory, problem: StateProblem) -> None:
    if c.grid is not problem.grid:
        raise StructuralError("control and state problem live on different grids")
    if c.n_steps != problem.n_steps or not math.isclose(c.dt, problem.dt):
        raise StructuralError(f"control has {c.n_steps} steps of {c.dt}, problem has {problem.n_steps} of {problem.dt}")


def evaluate(c: ControlTrajectory, k0: Field, problem: StateProblem) -> Evaluation:
    _check_time_grid(c, problem)
    state, report = problem.solve(k0, c)
    terms = objective_terms(state, c, problem.data, problem.params)
    return Evaluation(control=c, state=state, report=report, terms=terms)


def reduced_objective(c: ControlTrajectory, k0: Field, problem: StateProblem) -> float:
    """J(k(c), c) with k(c) from the windowed Picard solve."""
    return evaluate(c, k0, problem).value


def _colors(grid: Grid) -> np.ndarray:
    """Lattice coloring: two interior points share a color only if no epsilon-ball holds both."""
    stride = 2 * grid.layers + 1
    residues = grid.cells[grid.interior] % stride
    return residues @ (stride ** np.arange(grid.dim))


def productivity_jacobian(problem: StateProblem, k_interior: np.ndarray, t: float) -> sp.csr_matrix:
    """dP/dk on interior points by compressed central differences, one probe pair per color."""
    pairs = problem.pairs
    grid = problem.grid
    colors = _colors(grid)
    steps = JACOBIAN_STEP * (1.0 + np.abs(k_interior))
    n = grid.n_interior

    position = np.full(grid.n_points, -1)
    position[grid.interior_indices] = np.arange(n)
    rows = position[pairs.rows]
    cols = position[pairs.cols]
    keep = (rows >= 0) & (cols >= 0)
    rows, cols = rows[keep], cols[keep]

    differences = np.zeros((int(colors.max()) + 1, n))
    for color in np.unique(colors):
        probe = np.where(colors == color, steps, 0.0)
        plus = problem.productivity(k_interior + probe, t)
        minus = problem.productivity(k_interior - probe, t)
        differences[color] = plus - minus
    values = differences[colors[cols], rows] / (2.0 * steps[cols])
    return sp.csr_matrix((values, (rows, cols)), shape=(n, n))


def reduced_gradient(c: ControlTrajectory, k0: Field, problem: StateProblem,
                     evaluation: Evaluation | None = None) -> np.ndarray:
    """Euclidean gradient of the discrete reduced objective with respect to ``c.values``.

    Backward sweep with the transposed step matrices A_m = S - dP/dk(k_m, t_m):
    A_M^T lam_M = w (k_M - kT) / rho, A_m^T lam_m = lam_{m+1} / dt, and
    g_m = -U'(c_m) exp(-tau t_m - space_discount |x|^2) w dt - lam_{m+1}.
    """
    if evaluation is None:
        evaluation = evaluate(c, k0, problem)
    grid = problem.grid
    params = problem.params
    dt = problem.dt
    M = problem.n_steps
    w = grid.weights[grid.interior]
    state = evaluation.state.interior_values

    adjoint = np.zeros((M + 1, grid.n_interior))
    rhs = w * (state[M] - problem.data.kT.interior_values) / params.rho
    for m in range(M, 0, -1):
        step_matrix = problem.matrix - productivity_jacobian(problem, state[m], m * dt)
        adjoint[m] = spsolve(step_matrix.T.tocsc(), rhs)
        rhs = adjoint[m] / dt

    discount = discount_weights(grid, c.times, params)
    return -marginal_utility(c.values, params) * discount * w * dt - adjoint[1:]


def projected_gradient_norm(c: ControlTrajectory, gradient: np.ndarray) -> float:
    return float(np.linalg.norm(c.values - c.project(c.values - gradient)))


def projected_gradient_descent(c_init: ControlTrajectory, k0: Field, problem: StateProblem,
                               step_rule: StepRule | None = None, tol: float = 1e-8,
                               max_iter: int = 200) -> tuple[ControlTrajectory, OptimizationTrace]:
    """Minimize J over the control box by projected gradient steps with Armijo backtracking.

    Returns the best iterate and the trace; entry 0 describes the starting point.

    Raises:
        LineSearchError: no sufficient decrease after ``max_halvings`` halvings.
    """
    rule = step_rule or StepRule()
    current = evaluate(c_init, k0, problem)
    gradient = reduced_gradient(c_init, k0, problem, current)
    trace = OptimizationTrace()
    step = rule.initial

    def record(iteration: int, accepted_step: float) -> float:
        norm = projected_gradient_norm(current.control, gradient)
        trace.entries.append(TraceEntry(
            iteration=iteration,
            objective=current.value,
            utility_term=current.terms.utility_term,
            terminal_term=current.terms.terminal_term,
            gradient_norm=norm,
            step=accepted_step,
            active_fraction=current.control.active_fraction(),
        ))
        return norm

    norm = record(0, 0.0)
    for iteration in range(1, max_iter + 1):
        if norm < tol:
            trace.converged = True
            break
        c = current.control
        for _ in range(rule.max_halvings + 1):
            candidate = c.with_values(c.values - step * gradient)
            probe = evaluate(candidate, k0, problem)
            decrease = float(np.sum(gradient * (candidate.values - c.values)))
            if probe.value <= current.value + rule.armijo * decrease and probe.value < current.value:
                break
            step /= 2.0
        else:
            raise LineSearchError(f"no sufficient decrease after {rule.max_halvings} halvings at iteration {iteration}",
                                  residual=norm, report=trace)
        current = probe
        gradient = reduced_gradient(candidate, k0, problem, current)
        norm = record(iteration, step)
        logger.info("iteration %d: J=%.12e step=%.3e projected gradient=%.3e", iteration, current.value, step, norm)
        step *= rule.growth
    else:
        trace.converged = norm < tol

    return current.control, trace

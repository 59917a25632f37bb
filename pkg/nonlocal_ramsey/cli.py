"""Batch front end: ``nonlocal-ramsey --config run.cfg [--out DIR] [--seed N]``."""

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from types import UnionType
from typing import Annotated, Literal, Union, get_args, get_origin

import dotenv
import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from nonlocal_ramsey import serialization
from nonlocal_ramsey.calculus import (
    Field,
    TwoPointField,
    assemble_operator,
    bilinear_a,
    energy_norm,
    l2_norm,
    nl_adjoint_gradient,
    nl_diffusion,
    nl_divergence,
    nl_interaction,
)
from nonlocal_ramsey.containers import Container, create_domain, create_kernel_params
from nonlocal_ramsey.control import projected_gradient_descent
from nonlocal_ramsey.errors import ConfigError, NonlocalRamseyError
from nonlocal_ramsey.kernel import verify_kernel_properties
from nonlocal_ramsey.model import objective_terms
from nonlocal_ramsey.solver import AprioriConstants, apriori_check, oracle_deviation, vinfty_norm

logger = logging.getLogger(__name__)

Mode = Literal["verify-kernel", "verify-calculus", "solve", "oracle-check", "optimize", "sweep"]

IDENTITY_TOL = 1e-12
EQUIVALENCE_SLACK = 1e-8

EXIT_OK = 0
EXIT_CONVERGENCE = 2
EXIT_CHECK = 3
EXIT_IO = 4


class RunConfig(BaseModel):
    """Every key of the run configuration file with its default."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Mode

    dim: Literal[1, 2] = 1
    x1_min: float = 0.0
    x1_max: float = 1.0
    x2_min: float = 0.0
    x2_max: float = 1.0
    epsilon: PositiveFloat = 0.2
    h: PositiveFloat = 0.05
    max_points: PositiveInt = 200_000
    sigma: PositiveFloat | None = None
    mu: PositiveFloat | None = None

    beta: NonNegativeFloat = 1.0
    delta: NonNegativeFloat = 0.05
    tau: NonNegativeFloat = 0.03
    space_discount: NonNegativeFloat = 0.0
    rho: PositiveFloat = 1.0
    xi: PositiveFloat = 1.0
    T: PositiveFloat = 1.0
    Mp: PositiveFloat = 1.0
    lambda_p: PositiveFloat = 1.0
    theta: float = 0.5
    eta_u: PositiveFloat = 0.01

    steps: PositiveInt = 20
    window: PositiveFloat | None = None
    picard_tol: PositiveFloat = 1e-10
    picard_max_iter: PositiveInt = 50
    cg_rtol: PositiveFloat = 1e-10
    nonnegativity_tol: NonNegativeFloat = 0.0

    a0: str = "constant 1"
    k0: str = "gaussian 1 0.2"
    kT: str = "constant 0.5"

    c_min: NonNegativeFloat = 0.0
    c_max: PositiveFloat | None = None
    c_init: NonNegativeFloat = 0.0
    opt_tol: PositiveFloat = 1e-8
    opt_max_iter: PositiveInt = 200
    step_initial: PositiveFloat = 1.0
    step_growth: float = 2.0
    armijo: float = 1e-4
    max_halvings: PositiveInt = 40

    seed: NonNegativeInt = 0
    samples: PositiveInt = 100
    oracle_points: PositiveInt = 5
    oracle_ratio_min: PositiveFloat = 1.7
    oracle_ratio_max: PositiveFloat = 2.3

    sweep_param: str | None = None
    sweep_values: list[float] | None = None
    sweep_mode: Mode = "solve"

    out_dir: str = "out"

    @field_validator("sweep_values", mode="before")
    @classmethod
    def _split_values(cls, value):
        if isinstance(value, str):
            return [item for item in value.replace(",", " ").split() if item]
        return value

    @model_validator(mode="after")
    def _check_constraints(self) -> "RunConfig":
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1) (got {self.theta})")
        # surfaces box and radius violations with the owning type's message
        try:
            create_domain(self)
            create_kernel_params(self)
        except ValidationError as exc:
            raise ValueError("; ".join(_describe(error) for error in exc.errors())) from None
        if self.resolved_c_max < self.c_min:
            raise ValueError(f"c_max must be at least c_min (got [{self.c_min}, {self.resolved_c_max}])")
        if not self.c_min <= self.c_init <= self.resolved_c_max:
            raise ValueError(f"c_init must lie in [c_min, c_max] (got {self.c_init})")
        if self.oracle_ratio_min > self.oracle_ratio_max:
            raise ValueError("oracle_ratio_min must not exceed oracle_ratio_max")
        if self.mode == "sweep":
            if not _is_numeric_key(self.sweep_param):
                raise ValueError(f"sweep_param must name a numeric key (got {self.sweep_param!r})")
            if not self.sweep_values:
                raise ValueError("sweep_values must list at least one value")
            if self.sweep_mode == "sweep":
                raise ValueError("sweep_mode cannot be sweep")
        return self

    @property
    def resolved_c_max(self) -> float:
        return self.c_max if self.c_max is not None else self.Mp


def _numeric_annotation(annotation) -> bool:
    if annotation in (int, float):
        return True
    if get_origin(annotation) is Annotated:
        return _numeric_annotation(get_args(annotation)[0])
    if get_origin(annotation) not in (Union, UnionType):
        return False
    args = [arg for arg in get_args(annotation) if arg is not type(None)]
    return bool(args) and all(_numeric_annotation(arg) for arg in args)


def _is_numeric_key(name: str | None) -> bool:
    """True for configuration keys holding a single int or float, optional or constrained."""
    field = RunConfig.model_fields.get(name) if name else None
    return field is not None and _numeric_annotation(field.annotation)


def _describe(error: dict) -> str:
    location = ".".join(str(part) for part in error["loc"])
    if error["type"] == "missing":
        return f"missing {location}"
    if error["type"] == "extra_forbidden":
        return f"unknown key '{location}'"
    message = error["msg"].removeprefix("Value error, ")
    return f"{location}: {message}" if location else message


def validate_config(values: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError("; ".join(_describe(error) for error in exc.errors())) from exc


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated RunConfig."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"line {number}: expected 'key = value' (got {raw.strip()!r})")
        if key in values:
            raise ConfigError(f"line {number}: duplicate key '{key}'")
        values[key] = value
    return validate_config(values)


class RunResult(BaseModel):
    exit_code: int = EXIT_OK
    lines: list[str] = []
    metrics: dict[str, float] = {}


def _check_line(name: str, witnessed: float, bound: float, passed: bool) -> str:
    return f"{name}: witnessed={witnessed:.6e} bound={bound:.6e} {'PASS' if passed else 'FAIL'}"


def _verify_kernel(container: Container, out: Path) -> RunResult:
    report = verify_kernel_properties(container.kernel_params(), container.grid(), strict=False)
    serialization.write_json(out / "kernel_report.json", report.to_json_payload())
    return RunResult(
        exit_code=EXIT_OK if report.all_passed else EXIT_CHECK,
        lines=[check.summary_line() for check in report.checks],
        metrics={f"property_{c.property}": c.witnessed_constant for c in report.checks},
    )


def _relative(difference: float, scale: float) -> float:
    return abs(difference) / scale if scale > 0 else abs(difference)


def _verify_calculus(container: Container, config: RunConfig, out: Path) -> RunResult:
    grid = container.grid()
    pairs = container.pairs()
    problem = container.problem()
    rng = np.random.default_rng(config.seed)
    w = grid.weights
    interior = grid.interior
    residuals = {"adjointness": 0.0, "composition": 0.0, "gauss theorem": 0.0, "bilinear form": 0.0}

    for _ in range(config.samples):
        u = Field(rng.standard_normal(grid.n_points), grid)
        nu = TwoPointField(rng.standard_normal(pairs.n_pairs), pairs)
        divergence = nl_divergence(nu, grid).values
        pair_terms = w[pairs.rows] * pairs.col_weights * nu.values * nl_adjoint_gradient(u, pairs).values
        left = w * u.values * divergence
        residuals["adjointness"] = max(residuals["adjointness"], _relative(
            left.sum() - pair_terms.sum(), np.abs(left).sum() + np.abs(pair_terms).sum()))

        direct = nl_diffusion(u, pairs).values[interior]
        composed = -0.5 * nl_divergence(nl_adjoint_gradient(u, pairs), grid).values[interior]
        residuals["composition"] = max(residuals["composition"], _relative(
            np.max(np.abs(direct - composed)), max(1.0, float(np.max(np.abs(direct))))))

        inside = w[interior] * divergence[interior]
        shell = w[~interior] * nl_interaction(nu, grid)
        residuals["gauss theorem"] = max(residuals["gauss theorem"], _relative(
            inside.sum() - shell.sum(), np.abs(inside).sum() + np.abs(shell).sum()))

        v = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        a = bilinear_a(v, v, pairs, problem.params.delta, problem.params.beta)
        expected = problem.params.beta * energy_norm(v, pairs) ** 2 + problem.params.delta * l2_norm(v) ** 2
        residuals["bilinear form"] = max(residuals["bilinear form"], _relative(a - expected, abs(expected)))

    lines = [_check_line(name, value, IDENTITY_TOL, value <= IDENTITY_TOL) for name, value in residuals.items()]
    passed = all(value <= IDENTITY_TOL for value in residuals.values())

    constants = problem.equivalence_constants
    worst = 0.0
    for _ in range(config.samples):
        v = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        ratio = energy_norm(v, pairs) / l2_norm(v)
        worst = max(worst, (constants.c1 - ratio) / constants.c1, (ratio - constants.c2) / constants.c2)
    relative_violation = worst
    equivalent = relative_violation <= EQUIVALENCE_SLACK
    lines.append(_check_line("norm equivalence", relative_violation, EQUIVALENCE_SLACK, equivalent))

    assemble_operator(pairs, problem.params.beta).save(out / "operator.coo")
    metrics = {**{name.replace(" ", "_"): value for name, value in residuals.items()},
               "c1": constants.c1, "c2": constants.c2, "norm_equivalence": relative_violation}
    serialization.write_json(out / "calculus_report.json", metrics)
    return RunResult(exit_code=EXIT_OK if passed and equivalent else EXIT_CHECK, lines=lines, metrics=metrics)


def _solve(container: Container, config: RunConfig, out: Path) -> RunResult:
    problem = container.problem()
    pairs = container.pairs()
    k0 = container.k0()
    control = container.initial_control()
    grid = problem.grid

    state, report = problem.solve(k0, control)
    terms = objective_terms(state, control, problem.data, problem.params)
    serialization.write_grid_csv(out / "grid.csv", grid)
    state.to_csv(out / "trajectory.csv")
    control.to_csv(out / "control.csv")
    serialization.write_json(out / "picard_report.json", report.model_dump())

    lines = [report.summary_line()]
    exit_code = EXIT_OK
    metrics = {
        "objective": terms.total,
        "utility_term": terms.utility_term,
        "terminal_term": terms.terminal_term,
        "min_k": report.min_value,
        "vinfty_norm": vinfty_norm(state, pairs),
        "picard_iterations": float(report.iterations),
        "contraction_estimate": problem.contraction_estimate(problem.window_steps() * problem.dt),
    }
    if problem.params.beta > 0:
        estimate = apriori_check(state, control, k0, pairs, AprioriConstants.from_problem(problem))
        lines.append(estimate.summary_line())
        metrics["apriori_lhs"] = estimate.lhs
        metrics["apriori_rhs"] = estimate.rhs
        if not estimate.passed:
            exit_code = EXIT_CHECK
    serialization.write_json(out / "summary.json", metrics)
    return RunResult(exit_code=exit_code, lines=lines, metrics=metrics)


def _oracle_check(config: RunConfig, out: Path) -> RunResult:
    deviations = []
    points = None
    for steps in (config.steps, 2 * config.steps):
        container = Container(config=config.model_copy(update={"steps": steps}))
        problem = container.problem()
        control = container.initial_control()
        state, _ = problem.solve(container.k0(), control)
        if points is None:
            rng = np.random.default_rng(config.seed)
            count = min(config.oracle_points, problem.grid.n_interior)
            points = sorted(rng.choice(problem.grid.interior_indices, size=count, replace=False).tolist())
        report = oracle_deviation(state, control, problem.data, problem.params, problem.pairs, points)
        deviations.append(report.max_deviation)

    coarse, fine = deviations
    ratio = coarse / fine if fine > 0 else float("inf")
    passed = config.oracle_ratio_min <= ratio <= config.oracle_ratio_max
    metrics = {"deviation_coarse": coarse, "deviation_fine": fine, "ratio": ratio}
    serialization.write_json(out / "oracle_report.json", {**metrics, "points": points})
    lines = [
        f"oracle deviation: witnessed={fine:.6e} (steps={2 * config.steps}), {coarse:.6e} (steps={config.steps})",
        _check_line("oracle refinement ratio", ratio, config.oracle_ratio_min, passed)
        + f" (admissible [{config.oracle_ratio_min}, {config.oracle_ratio_max}])",
    ]
    return RunResult(exit_code=EXIT_OK if passed else EXIT_CHECK, lines=lines, metrics=metrics)


def _optimize(container: Container, config: RunConfig, out: Path) -> RunResult:
    problem = container.problem()
    k0 = container.k0()
    best, trace = projected_gradient_descent(container.initial_control(), k0, problem, container.step_rule(),
                                             tol=config.opt_tol, max_iter=config.opt_max_iter)
    state, _ = problem.solve(k0, best)
    best.to_csv(out / "control.csv")
    state.to_csv(out / "trajectory.csv")
    serialization.write_json(out / "trace.json", trace.model_dump())

    last = trace.entries[-1]
    metrics = {"objective": last.objective, "utility_term": last.utility_term, "terminal_term": last.terminal_term,
               "projected_gradient": last.gradient_norm, "iterations": float(trace.iterations)}
    lines = [_check_line("optimizer stationarity", last.gradient_norm, config.opt_tol, trace.converged)]
    return RunResult(exit_code=EXIT_OK if trace.converged else EXIT_CONVERGENCE, lines=lines, metrics=metrics)


def _sweep_entry(config: RunConfig, index: int, value: float, out: Path) -> RunResult:
    entry_dir = out / f"{index:03d}_{config.sweep_param}"
    try:
        entry = validate_config({**config.model_dump(), config.sweep_param: value, "mode": config.sweep_mode})
        return run(entry, entry_dir)
    except NonlocalRamseyError as exc:
        logger.error("sweep entry %d (%s=%r) failed: %s", index, config.sweep_param, value, exc)
        return RunResult(exit_code=exc.exit_code, lines=[f"{config.sweep_param}={value!r}: {exc}"])


def _sweep(config: RunConfig, out: Path) -> RunResult:
    values = config.sweep_values or []
    with ThreadPoolExecutor() as pool:
        results = list(pool.map(lambda item: _sweep_entry(config, item[0], item[1], out), enumerate(values)))

    metric_names = sorted({name for result in results for name in result.metrics})
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", config.sweep_param, "exit_code", *metric_names])
        for index, (value, result) in enumerate(zip(values, results)):
            writer.writerow([index, repr(float(value)), result.exit_code,
                             *(repr(result.metrics[name]) if name in result.metrics else "" for name in metric_names)])

    lines = [f"[{config.sweep_param}={value!r}] {line}"
             for value, result in zip(values, results) for line in result.lines]
    return RunResult(exit_code=max(result.exit_code for result in results), lines=lines)


def run(config: RunConfig, out: Path | None = None) -> RunResult:
    """Execute the configured mode and write its artifacts under ``out`` (default ``config.out_dir``)."""
    out = Path(out if out is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running mode %s into %s", config.mode, out)
    if config.mode == "sweep":
        return _sweep(config, out)
    if config.mode == "oracle-check":
        return _oracle_check(config, out)

    container = Container(config=config)
    match config.mode:
        case "verify-kernel":
            return _verify_kernel(container, out)
        case "verify-calculus":
            return _verify_calculus(container, config, out)
        case "solve":
            return _solve(container, config, out)
        case "optimize":
            return _optimize(container, config, out)
    raise ConfigError(f"unsupported mode {config.mode!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-ramsey", description="Nonlocal spatial Ramsey model runs.")
    parser.add_argument("--config", required=True, type=Path, help="key = value configuration file")
    parser.add_argument("--out", type=Path, default=None, help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized checks (overrides seed)")
    return parser


def main(argv: list[str] | None = None) -> int:
    dotenv.load_dotenv()
    logging.basicConfig(
        level=os.environ.get("NONLOCAL_RAMSEY_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = str(args.out)
        config = parse_config(text)
        if overrides:
            config = validate_config({**config.model_dump(), **overrides})
        result = run(config)
    except NonlocalRamseyError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return EXIT_IO
    for line in result.lines:
        print(line)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

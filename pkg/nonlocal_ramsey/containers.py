from dependency_injector import containers, providers

from nonlocal_ramsey.calculus import Field, PairSet
from nonlocal_ramsey.control import ControlTrajectory, StepRule
from nonlocal_ramsey.geometry import Domain, Grid, build_grid
from nonlocal_ramsey.kernel import KernelParams
from nonlocal_ramsey.model import ModelParams, ProductivityData, build_profile
from nonlocal_ramsey.solver import SolverSettings, StateProblem

MODEL_KEYS = ("beta", "delta", "tau", "space_discount", "rho", "xi", "T", "Mp", "lambda_p", "theta", "eta_u")


def create_domain(config) -> Domain:
    """Factory function to create the Domain from the run configuration"""
    lower = (config.x1_min, config.x2_min)[: config.dim]
    upper = (config.x1_max, config.x2_max)[: config.dim]
    return Domain(dim=config.dim, lower=lower, upper=upper, epsilon=config.epsilon)


def create_grid(domain: Domain, config) -> Grid:
    return build_grid(domain, config.h, max_points=config.max_points)


def create_kernel_params(config) -> KernelParams:
    half = config.epsilon / 2.0
    return KernelParams(
        sigma=config.sigma if config.sigma is not None else half,
        epsilon=config.epsilon,
        mu=config.mu if config.mu is not None else half,
        dim=config.dim,
    )


def create_model_params(config) -> ModelParams:
    return ModelParams(**{key: getattr(config, key) for key in MODEL_KEYS})


def create_productivity_data(config, grid: Grid) -> ProductivityData:
    return ProductivityData(
        A0=build_profile(config.a0, grid, key="a0"),
        kT=build_profile(config.kT, grid, key="kT"),
    )


def create_initial_state(config, grid: Grid) -> Field:
    return build_profile(config.k0, grid, key="k0")


def create_solver_settings(config) -> SolverSettings:
    return SolverSettings(
        steps=config.steps,
        window=config.window,
        picard_tol=config.picard_tol,
        picard_max_iter=config.picard_max_iter,
        cg_rtol=config.cg_rtol,
        nonnegativity_tol=config.nonnegativity_tol,
    )


def create_step_rule(config) -> StepRule:
    return StepRule(initial=config.step_initial, growth=config.step_growth, armijo=config.armijo,
                    max_halvings=config.max_halvings)


def create_initial_control(config, problem: StateProblem) -> ControlTrajectory:
    return ControlTrajectory.constant(problem.grid, problem.n_steps, problem.dt, config.c_init,
                                      c_min=config.c_min, c_max=config.resolved_c_max)


class Container(containers.DeclarativeContainer):
    # Validated RunConfig, supplied per run
    config = providers.Dependency()

    domain = providers.Singleton(create_domain, config=config)
    grid = providers.Singleton(create_grid, domain=domain, config=config)
    kernel_params = providers.Singleton(create_kernel_params, config=config)

    # Singleton so every operator shares one pair search
    pairs = providers.Singleton(PairSet.build, grid=grid, params=kernel_params)

    model_params = providers.Singleton(create_model_params, config=config)
    data = providers.Singleton(create_productivity_data, config=config, grid=grid)
    k0 = providers.Singleton(create_initial_state, config=config, grid=grid)
    solver_settings = providers.Singleton(create_solver_settings, config=config)
    problem = providers.Singleton(
        StateProblem,
        pairs=pairs,
        params=model_params,
        data=data,
        settings=solver_settings,
    )
    step_rule = providers.Singleton(create_step_rule, config=config)
    initial_control = providers.Singleton(create_initial_control, config=config, problem=problem)

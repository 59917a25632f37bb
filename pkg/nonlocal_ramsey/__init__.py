"""Nonlocal spatial Ramsey model: nonlocal calculus, state solver and optimal consumption."""

from nonlocal_ramsey.calculus import Field, PairSet, TwoPointField
from nonlocal_ramsey.control import ControlTrajectory, projected_gradient_descent, reduced_gradient, reduced_objective
from nonlocal_ramsey.errors import NonlocalRamseyError
from nonlocal_ramsey.geometry import Domain, Grid, build_grid
from nonlocal_ramsey.kernel import KernelParams, verify_kernel_properties
from nonlocal_ramsey.model import ModelParams, ProductivityData
from nonlocal_ramsey.solver import SolverSettings, StateProblem, StateTrajectory, picard_solve

__all__ = [
    "ControlTrajectory",
    "Domain",
    "Field",
    "Grid",
    "KernelParams",
    "ModelParams",
    "NonlocalRamseyError",
    "PairSet",
    "ProductivityData",
    "SolverSettings",
    "StateProblem",
    "StateTrajectory",
    "TwoPointField",
    "build_grid",
    "picard_solve",
    "projected_gradient_descent",
    "reduced_gradient",
    "reduced_objective",
    "verify_kernel_properties",
]

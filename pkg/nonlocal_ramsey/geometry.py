"""Spatial domain, interaction shell and the midpoint quadrature grid over both."""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from nonlocal_ramsey.errors import ConfigError, GridBudgetError

logger = logging.getLogger(__name__)

DEFAULT_MAX_POINTS = 200_000

# Guards ceil/round against ratios like 0.2/0.1 == 2.0000000000000004.
_RATIO_SLACK = 1e-9


class Region(StrEnum):
    INTERIOR = "interior"
    INTERACTION = "interaction"
    OUTSIDE = "outside"


class Domain(BaseModel):
    """Open box Omega with interaction radius epsilon.

    Args:
        dim: Spatial dimension, 1 or 2.
        lower: Lower corner (a_1, ..., a_n).
        upper: Upper corner (b_1, ..., b_n).
        epsilon: Interaction radius.
    """

    model_config = ConfigDict(frozen=True)

    dim: Literal[1, 2]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    epsilon: PositiveFloat = Field(..., description="interaction radius")

    @model_validator(mode="after")
    def _check_box(self) -> "Domain":
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError(f"bounds must have {self.dim} entries per corner")
        for axis, (a, b) in enumerate(zip(self.lower, self.upper), start=1):
            if not b > a:
                raise ValueError(f"x{axis}_max must exceed x{axis}_min (got [{a}, {b}])")
        return self

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def distance_to_box(self, x) -> float:
        """Euclidean distance from x to the closed box (0 inside)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        below = np.maximum(np.asarray(self.lower) - x, 0.0)
        above = np.maximum(x - np.asarray(self.upper), 0.0)
        return float(np.sqrt(np.sum((below + above) ** 2)))

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x > np.asarray(self.lower)) and np.all(x < np.asarray(self.upper)))


@dataclass(frozen=True, eq=False)
class Grid:
    """Midpoint grid over Omega and its interaction layers.

    Points are ordered lexicographically by axis. ``cells`` holds the integer
    lattice index of every point, counted from the outermost layer.
    """

    domain: Domain
    spacing: float
    points: np.ndarray
    weights: np.ndarray
    interior: np.ndarray
    cells: np.ndarray
    layers: int
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @property
    def interaction_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.interior)

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(self.interior))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def regions(self) -> list[Region]:
        return [Region.INTERIOR if flag else Region.INTERACTION for flag in self.interior]

    def interior_volume(self) -> float:
        return float(self.weights[self.interior].sum())

    def distance_to_domain(self) -> np.ndarray:
        """Distance of every grid point to the closed box (0 for interior points)."""
        lower = np.asarray(self.domain.lower)
        upper = np.asarray(self.domain.upper)
        gap = np.maximum(lower - self.points, 0.0) + np.maximum(self.points - upper, 0.0)
        return np.sqrt(np.sum(gap**2, axis=1))

    def interaction_volume(self) -> float:
        """Quadrature volume of the interaction points that lie in the exact epsilon-shell.

        Corner cells beyond epsilon belong to the grid but not to Omega_I.
        """
        in_shell = ~self.interior & (self.distance_to_domain() < self.domain.epsilon)
        return float(self.weights[in_shell].sum())


def build_grid(domain: Domain, h: float, max_points: int = DEFAULT_MAX_POINTS) -> Grid:
    """Build the midpoint grid covering Omega plus ceil(epsilon/h) cell layers.

    Args:
        domain: The box and its interaction radius.
        h: Cell width, 0 < h <= min side length.
        max_points: Point budget; larger grids are refused.

    Returns:
        Grid with uniform weights h**dim.

    Raises:
        ConfigError: h out of range.
        GridBudgetError: the grid would exceed ``max_points``.
    """
    if not h > 0:
        raise ConfigError(f"h must be positive (got {h})")
    if h > float(domain.extent.min()) * (1 + _RATIO_SLACK):
        raise ConfigError(f"h must not exceed the smallest side of the domain (got {h})")

    layers = max(1, math.ceil(domain.epsilon / h - _RATIO_SLACK))
    counts = [max(1, round(float(side) / h)) for side in domain.extent]
    shape = tuple(n + 2 * layers for n in counts)
    total = math.prod(shape)
    if total > max_points:
        raise GridBudgetError(f"grid with {total} points exceeds the point budget of {max_points}")

    axes = []
    for a, n in zip(domain.lower, counts):
        idx = np.arange(-layers, n + layers)
        axes.append(a + (idx + 0.5) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)

    cell_mesh = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    cells = np.stack([m.ravel() for m in cell_mesh], axis=1)
    interior = np.ones(total, dtype=bool)
    for axis, n in enumerate(counts):
        interior &= (cells[:, axis] >= layers) & (cells[:, axis] < layers + n)

    weights = np.full(total, h**domain.dim)
    logger.info(
        "built %d-D grid: %d interior, %d interaction points, h=%g, %d layer(s)",
        domain.dim, int(interior.sum()), int((~interior).sum()), h, layers,
    )
    return Grid(
        domain=domain,
        spacing=float(h),
        points=points,
        weights=weights,
        interior=interior,
        cells=cells,
        layers=layers,
        shape=shape,
    )


def classify_point(grid: Grid, x) -> Region:
    """Geometric region of an arbitrary coordinate relative to the grid's domain."""
    domain = grid.domain
    if domain.contains(x):
        return Region.INTERIOR
    if domain.distance_to_box(x) < domain.epsilon:
        return Region.INTERACTION
    return Region.OUTSIDE

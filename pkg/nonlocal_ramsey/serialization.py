"""CSV and JSON artifacts.

Floats are written with ``repr`` so every file reads back to the exact
in-memory values. JSON documents use sorted keys and carry no timestamps.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from nonlocal_ramsey.calculus import Field
from nonlocal_ramsey.errors import DataIOError
from nonlocal_ramsey.geometry import Grid

logger = logging.getLogger(__name__)

REGION_CODES = {True: "I", False: "B"}


def _coordinate_columns(grid: Grid) -> list[str]:
    return [f"x{axis + 1}" for axis in range(grid.dim)]


def _float(text: str, path: Path, line: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise DataIOError(f"{path}:{line}: not a number: {text!r}") from exc


def write_grid_csv(path: Path, grid: Grid, values: np.ndarray | None = None) -> None:
    """Rows ``idx, x1[, x2], weight, region`` plus ``value`` when values are given."""
    header = ["idx", *_coordinate_columns(grid), "weight", "region"]
    if values is not None:
        header.append("value")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i in range(grid.n_points):
            row = [i, *(repr(float(c)) for c in grid.points[i]), repr(float(grid.weights[i])),
                   REGION_CODES[bool(grid.interior[i])]]
            if values is not None:
                row.append(repr(float(values[i])))
            writer.writerow(row)


def write_field_csv(path: Path, field: Field) -> None:
    write_grid_csv(path, field.grid, field.values)


def read_field_csv(path: Path, grid: Grid) -> Field:
    """Read a field file written for ``grid``; coordinates must match the grid points."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    required = {"idx", *_coordinate_columns(grid), "value"}
    if not rows or not required <= set(rows[0]):
        raise DataIOError(f"{path}: expected columns {sorted(required)}")
    if len(rows) != grid.n_points:
        raise DataIOError(f"{path}: {len(rows)} rows for a grid of {grid.n_points} points")

    values = np.empty(grid.n_points)
    seen = np.zeros(grid.n_points, dtype=bool)
    for line, row in enumerate(rows, start=2):
        try:
            i = int(row["idx"])
        except ValueError as exc:
            raise DataIOError(f"{path}:{line}: bad index {row['idx']!r}") from exc
        if not 0 <= i < grid.n_points or seen[i]:
            raise DataIOError(f"{path}:{line}: index {i} out of range or repeated")
        coords = np.array([_float(row[c], path, line) for c in _coordinate_columns(grid)])
        if not np.allclose(coords, grid.points[i], rtol=0.0, atol=1e-9 * (1.0 + grid.spacing)):
            raise DataIOError(f"{path}:{line}: coordinates {coords.tolist()} do not match grid point {i}")
        values[i] = _float(row["value"], path, line)
        seen[i] = True
    return Field(values, grid)


def write_time_series_csv(path: Path, grid: Grid, times: np.ndarray, values: np.ndarray, *,
                          value_column: str, indices: np.ndarray | None = None) -> None:
    """Rows ``m, t, idx, x1[, x2], <value_column>``; ``values[m, j]`` belongs to grid point ``indices[j]``."""
    indices = np.arange(grid.n_points) if indices is None else np.asarray(indices)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["m", "t", "idx", *_coordinate_columns(grid), value_column])
        for m, t in enumerate(times):
            for j, i in enumerate(indices):
                writer.writerow([m, repr(float(t)), int(i), *(repr(float(c)) for c in grid.points[i]),
                                 repr(float(values[m, j]))])


def read_time_series_csv(path: Path, grid: Grid, *, value_column: str,
                         indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_time_series_csv`. Returns (times, values)."""
    path = Path(path)
    indices = np.arange(grid.n_points) if indices is None else np.asarray(indices)
    position = {int(i): j for j, i in enumerate(indices)}
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not rows or value_column not in rows[0]:
        raise DataIOError(f"{path}: missing column {value_column!r}")
    if len(rows) % len(indices):
        raise DataIOError(f"{path}: {len(rows)} rows is not a multiple of {len(indices)} points")

    n_nodes = len(rows) // len(indices)
    times = np.empty(n_nodes)
    values = np.empty((n_nodes, len(indices)))
    for line, row in enumerate(rows, start=2):
        m, i = int(row["m"]), int(row["idx"])
        if not 0 <= m < n_nodes or i not in position:
            raise DataIOError(f"{path}:{line}: unexpected node m={m} idx={i}")
        times[m] = _float(row["t"], path, line)
        values[m, position[i]] = _float(row[value_column], path, line)
    return times, values


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(path: Path, payload: Any) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=_plain)
    Path(path).write_text(text + "\n", encoding="utf-8")
    logger.debug("wrote %s", path)

"""Hierarchical curve samples on a shared time grid.

A :class:`CurveSet` holds curves indexed by (subject, occasion, curve) on one
:class:`Grid`. Curves are dense: every record has a value at every grid point.
The wide CSV layout is one row per curve::

    subject_id,occasion_id,curve_id,v0,...,v{L-1}

with an optional sidecar grid CSV (header ``t``, one row per grid point).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DuplicateRecordError, GridError, InsufficientDataError

#: occasion/curve label used for derived per-subject mean curves
MEAN_TOKEN = "__mean__"


@dataclass(frozen=True)
class Grid:
    """Ordered time points with quadrature weights.

    Weights default to (span / L) each, so a uniform grid on [0, 1] carries
    weight 1/L per point and the weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise GridError("grid needs at least 2 points")
        if not np.all(np.isfinite(points)):
            raise GridError("grid points must be finite")
        if np.any(np.diff(points) <= 0):
            raise GridError("grid points must be strictly increasing")
        if weights.shape != points.shape:
            raise GridError("weights must match grid points")
        if np.any(weights <= 0):
            raise GridError("grid weights must be positive")
        span = points[-1] - points[0]
        if abs(weights.sum() - span) > 1e-6 * max(1.0, span):
            raise GridError("grid weights must sum to the domain span")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n_points: int, span: tuple[float, float] = (0.0, 1.0)) -> "Grid":
        """Uniform grid of ``n_points`` over ``span`` with equal weights."""
        lo, hi = span
        if n_points < 2 or hi <= lo:
            raise GridError("need n_points >= 2 and a positive span")
        points = np.linspace(lo, hi, n_points)
        weights = np.full(n_points, (hi - lo) / n_points)
        return cls(points, weights)

    @property
    def n_points(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.points.tobytes(), self.weights.tobytes()))


@dataclass(frozen=True)
class CurveSet:
    """Dense curves keyed by (subject_id, occasion_id, curve_id).

    Keys are strings; ``values`` is an (n_curves, L) array in input order. A
    single measurement-unit label applies to the whole set.
    """

    grid: Grid
    subject_ids: tuple[str, ...]
    occasion_ids: tuple[str, ...]
    curve_ids: tuple[str, ...]
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        n = len(self.subject_ids)
        if n == 0:
            raise InsufficientDataError("curve set needs at least one record")
        if len(self.occasion_ids) != n or len(self.curve_ids) != n:
            raise DataFormatError("id columns must have equal length")
        if values.shape != (n, self.grid.n_points):
            raise DataFormatError(
                f"values must be ({n}, {self.grid.n_points}), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataFormatError("curve values must be finite")
        keys = set()
        for key in zip(self.subject_ids, self.occasion_ids, self.curve_ids):
            if key in keys:
                raise DuplicateRecordError(f"duplicate record {key}")
            keys.add(key)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "occasion_ids", tuple(str(s) for s in self.occasion_ids))
        object.__setattr__(self, "curve_ids", tuple(str(s) for s in self.curve_ids))

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]

    def subjects(self) -> list[str]:
        """Unique subject ids in order of first appearance."""
        seen: dict[str, None] = {}
        for s in self.subject_ids:
            seen.setdefault(s)
        return list(seen)

    def indices_by_subject(self) -> dict[str, np.ndarray]:
        """Row indices per subject, subjects in order of first appearance."""
        groups: dict[str, list[int]] = {}
        for i, s in enumerate(self.subject_ids):
            groups.setdefault(s, []).append(i)
        return {s: np.asarray(ix, dtype=int) for s, ix in groups.items()}

    def indices_by_unit(self, per_occasion: bool = False) -> dict[tuple[str, str], np.ndarray]:
        """Row indices per scoring unit.

        Units are subjects by default (occasion key ``__all__``), or
        (subject, occasion) pairs when ``per_occasion`` is set.
        """
        groups: dict[tuple[str, str], list[int]] = {}
        for i, (s, o) in enumerate(zip(self.subject_ids, self.occasion_ids)):
            key = (s, o) if per_occasion else (s, "__all__")
            groups.setdefault(key, []).append(i)
        return {k: np.asarray(ix, dtype=int) for k, ix in groups.items()}

    def with_values(self, values: np.ndarray) -> "CurveSet":
        """Copy of this set with replaced values (same keys and grid)."""
        return CurveSet(
            grid=self.grid,
            subject_ids=self.subject_ids,
            occasion_ids=self.occasion_ids,
            curve_ids=self.curve_ids,
            values=values,
            unit=self.unit,
        )


def subject_mean_curves(cs: CurveSet) -> CurveSet:
    """Pointwise mean curve per subject, pooled over occasions and curves.

    The output has one record per subject in order of first appearance, with
    occasion and curve ids set to ``__mean__``.
    """
    groups = cs.indices_by_subject()
    subjects = list(groups)
    means = np.vstack([cs.values[ix].mean(axis=0) for ix in groups.values()])
    n = len(subjects)
    return CurveSet(
        grid=cs.grid,
        subject_ids=tuple(subjects),
        occasion_ids=(MEAN_TOKEN,) * n,
        curve_ids=(MEAN_TOKEN,) * n,
        values=means,
        unit=cs.unit,
    )


def resample_to_grid(values: np.ndarray, source: Grid, target: Grid) -> np.ndarray:
    """Linearly interpolate ``values`` from ``source`` onto ``target`` points.

    Target points must lie within the source span up to a 1e-9 clamping
    tolerance; endpoints are clamped to the nearest source value.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != source.points.shape:
        raise GridError("values must match the source grid length")
    lo, hi = source.points[0], source.points[-1]
    if target.points[0] < lo - 1e-9 or target.points[-1] > hi + 1e-9:
        raise GridError("target grid extends beyond the source span")
    return np.interp(target.points, source.points, values)


def load_grid(path) -> np.ndarray:
    """Read a sidecar grid CSV (header ``t``) and return its points."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t"]:
        raise DataFormatError(f"{path}: grid file must have a single 't' column")
    try:
        points = np.array([float(r[0]) for r in rows[1:]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: non-numeric grid value") from exc
    return points


def load_curves(path, *, delimiter: str = ",", has_header: bool = True, grid_path=None) -> CurveSet:
    """Load a wide curve CSV into a :class:`CurveSet`.

    The grid is uniform on [0, 1] unless ``grid_path`` points to a sidecar
    grid CSV with exactly L rows. With ``has_header`` False the columns are
    assumed to follow the standard order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise DataFormatError(f"{path}: empty file")

    if has_header:
        header = rows[0]
        body = rows[1:]
        if len(header) < 4 or header[:3] != ["subject_id", "occasion_id", "curve_id"]:
            raise DataFormatError(
                f"{path}: expected header subject_id,occasion_id,curve_id,v0,..."
            )
        n_values = len(header) - 3
        first_data_row = 2
    else:
        body = rows
        if len(rows[0]) < 4:
            raise DataFormatError(f"{path}: rows need at least one value column")
        n_values = len(rows[0]) - 3
        first_data_row = 1

    if not body:
        raise DataFormatError(f"{path}: no curve records")

    subjects, occasions, curves = [], [], []
    values = np.empty((len(body), n_values), dtype=float)
    for r, row in enumerate(body):
        rownum = r + first_data_row
        if len(row) != n_values + 3:
            raise DataFormatError(
                f"{path}: row {rownum} has {len(row)} columns, expected {n_values + 3}"
            )
        subjects.append(row[0])
        occasions.append(row[1])
        curves.append(row[2])
        for c, cell in enumerate(row[3:]):
            try:
                values[r, c] = float(cell)
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}: row {rownum}, value column {c}: not a number: {cell!r}"
                ) from exc

    if grid_path is not None:
        points = load_grid(grid_path)
        if points.size != n_values:
            raise DataFormatError(
                f"{grid_path}: grid has {points.size} rows but curves have {n_values} columns"
            )
        span = points[-1] - points[0]
        grid = Grid(points, np.full(points.size, span / points.size))
    else:
        grid = Grid.uniform(n_values)

    return CurveSet(
        grid=grid,
        subject_ids=tuple(subjects),
        occasion_ids=tuple(occasions),
        curve_ids=tuple(curves),
        values=values,
    )


def save_curves(cs: CurveSet, path, *, delimiter: str = ",") -> None:
    """Write a :class:`CurveSet` to a wide CSV (lossless for finite doubles)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(
            ["subject_id", "occasion_id", "curve_id"]
            + [f"v{i}" for i in range(cs.grid.n_points)]
        )
        for i in range(cs.n_curves):
            writer.writerow(
                [cs.subject_ids[i], cs.occasion_ids[i], cs.curve_ids[i]]
                + [repr(float(v)) for v in cs.values[i]]
            )


def save_grid(grid: Grid, path) -> None:
    """Write the sidecar grid CSV for ``grid``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"])
        for t in grid.points:
            writer.writerow([repr(float(t))])

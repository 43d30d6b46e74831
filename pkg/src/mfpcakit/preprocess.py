"""Curve quality control, functional outlier screening, and landmark registration.

The cleaning pipeline for repeated physiological cycles (e.g. segmented ECG
beats) runs in four stages: template-matching QC per recording, modified band
depth functional-boxplot outlier removal, peak location inside configured
windows, and monotone time warping that aligns the located peaks to common
target positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .curves import CurveSet, Grid
from .errors import (
    GridError,
    InsufficientDataError,
    InvalidLandmarksError,
    LandmarkNotFoundError,
)

DEFAULT_LANDMARK_NAMES = ("P", "R", "T")


@dataclass(frozen=True)
class CycleQc:
    """Per-cycle template-matching outcome."""

    curve_id: str
    correlation: float
    passed: bool
    zero_variance: bool = False


@dataclass(frozen=True)
class QcReport:
    """Template-matching report for one recording of repeated cycles."""

    per_cycle: tuple[CycleQc, ...]
    recording_good: bool
    template: np.ndarray
    r_min: float
    min_good: int

    @property
    def n_passed(self) -> int:
        return sum(c.passed for c in self.per_cycle)

    def passed_curve_ids(self) -> list[str]:
        return [c.curve_id for c in self.per_cycle if c.passed]


@dataclass(frozen=True)
class LandmarkSet:
    """Named landmark times, strictly increasing and strictly inside the domain."""

    names: tuple[str, ...]
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(self.names) != times.size:
            raise InvalidLandmarksError("one name per landmark time required")
        if times.size and np.any(np.diff(times) <= 0):
            raise InvalidLandmarksError("landmark times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))


def template_qc(cycles: CurveSet, r_min: float = 0.9, min_good: int = 10) -> QcReport:
    """Template-matching quality control over one recording's cycles.

    The template is the pointwise mean of all cycles. A cycle passes when its
    Pearson correlation with the template is at least ``r_min``; the recording
    is good when at least ``min_good`` cycles pass. Zero-variance cycles have
    no defined correlation and fail with a flag.
    """
    if cycles.n_curves < 2:
        raise InsufficientDataError("template QC needs at least 2 cycles")
    values = cycles.values
    template = values.mean(axis=0)
    t_centered = template - template.mean()
    t_norm = float(np.sqrt(np.sum(t_centered**2)))

    results = []
    for i in range(cycles.n_curves):
        v = values[i] - values[i].mean()
        v_norm = float(np.sqrt(np.sum(v**2)))
        if v_norm == 0.0 or t_norm == 0.0:
            results.append(
                CycleQc(cycles.curve_ids[i], float("nan"), False, zero_variance=True)
            )
            continue
        corr = float(np.dot(v, t_centered) / (v_norm * t_norm))
        results.append(CycleQc(cycles.curve_ids[i], corr, corr >= r_min))

    n_passed = sum(c.passed for c in results)
    return QcReport(
        per_cycle=tuple(results),
        recording_good=n_passed >= min_good,
        template=template,
        r_min=r_min,
        min_good=min_good,
    )


def mbd_depths(cs: CurveSet) -> list[tuple[str, float]]:
    """Modified band depth (J=2) of every curve in the set.

    The depth of a curve is the average, over all unordered pairs of curves,
    of the fraction of grid points where it lies inside the band spanned by
    the pair; boundary contact counts as inside.
    """
    n = cs.n_curves
    if n < 2:
        raise InsufficientDataError("band depth needs at least 2 curves")
    values = cs.values
    totals = np.zeros(n)
    for a in range(n - 1):
        for b in range(a + 1, n):
            lo = np.minimum(values[a], values[b])
            hi = np.maximum(values[a], values[b])
            inside = (values >= lo) & (values <= hi)
            totals += inside.mean(axis=1)
    depths = totals / (n * (n - 1) / 2)
    return list(zip(cs.curve_ids, depths))


def boxplot_outliers(cs: CurveSet, factor: float = 1.5) -> list[str]:
    """Functional-boxplot outliers by modified band depth.

    The central region is the pointwise envelope of the 50% deepest curves;
    the fences inflate that envelope by ``factor`` times its pointwise height.
    A curve exiting the fence at any grid point is flagged.
    """
    n = cs.n_curves
    if n < 4:
        raise InsufficientDataError("functional boxplot needs at least 4 curves")
    depths = np.array([d for _, d in mbd_depths(cs)])
    order = np.argsort(-depths, kind="stable")
    central = cs.values[order[: math.ceil(n / 2)]]
    env_lo = central.min(axis=0)
    env_hi = central.max(axis=0)
    height = env_hi - env_lo
    fence_lo = env_lo - factor * height
    fence_hi = env_hi + factor * height
    outranged = (cs.values < fence_lo) | (cs.values > fence_hi)
    return [cs.curve_ids[i] for i in range(n) if outranged[i].any()]


def locate_landmarks(
    values: np.ndarray,
    grid: Grid,
    windows: list[tuple[float, float]],
    names: tuple[str, ...] | None = None,
) -> LandmarkSet:
    """Locate one peak per search window.

    Each landmark is the grid time of the maximum value strictly inside its
    window; the peak must exceed the curve values at both window boundaries,
    otherwise a :class:`LandmarkNotFoundError` names the offending window.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.points.shape:
        raise GridError("values must match the grid length")
    if names is None:
        names = DEFAULT_LANDMARK_NAMES if len(windows) == 3 else tuple(
            f"L{i + 1}" for i in range(len(windows))
        )
    if len(names) != len(windows):
        raise InvalidLandmarksError("one name per window required")
    prev_hi = -np.inf
    for lo, hi in windows:
        if hi <= lo or lo < prev_hi:
            raise InvalidLandmarksError("windows must be ordered and disjoint")
        prev_hi = hi

    times = []
    t = grid.points
    for (lo, hi), name in zip(windows, names):
        interior = (t > lo) & (t < hi)
        if not interior.any():
            raise LandmarkNotFoundError(f"window ({lo}, {hi}) contains no grid points")
        idx = np.flatnonzero(interior)
        best = idx[np.argmax(values[idx])]
        boundary = np.interp([lo, hi], t, values)
        if not (values[best] > boundary[0] and values[best] > boundary[1]):
            raise LandmarkNotFoundError(
                f"no peak above the boundary values in window ({lo}, {hi}) for landmark {name}"
            )
        times.append(t[best])
    return LandmarkSet(names=tuple(names), times=np.array(times))


def landmark_register(
    values: np.ndarray, grid: Grid, source: LandmarkSet, target: LandmarkSet
) -> tuple[np.ndarray, np.ndarray]:
    """Warp a curve so its landmarks move to the target positions.

    The warp h is the monotone (Fritsch-Carlson) cubic through the anchors
    (0, 0), (target_k, source_k), ..., (T, T); the registered curve is the
    linear interpolation of ``values`` at h(t). Returns (registered, warp).
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.points.shape:
        raise GridError("values must match the grid length")
    if len(source.times) != len(target.times):
        raise InvalidLandmarksError("source and target must have the same landmark count")
    t0, t1 = grid.points[0], grid.points[-1]
    anchors_x = np.concatenate([[t0], target.times, [t1]])
    anchors_y = np.concatenate([[t0], source.times, [t1]])
    if np.any(np.diff(anchors_x) <= 0) or np.any(np.diff(anchors_y) <= 0):
        raise InvalidLandmarksError(
            "landmark anchors must be strictly increasing and strictly inside the domain"
        )
    warp = PchipInterpolator(anchors_x, anchors_y)(grid.points)
    warp[0], warp[-1] = t0, t1
    registered = np.interp(warp, grid.points, values)
    return registered, warp

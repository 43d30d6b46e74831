"""Normative projection scoring of new curves against a fixed reference model.

Single-level scores are plain inner products of the centered curve with the
reference eigenfunctions. Two-level scoring is sequential: raw level-1
projections are averaged over a scoring unit's curves and shrunk toward zero
by the best-linear-predictor factor lambda / (lambda + sigma_e / n); the
subject fit is removed and the leftover is projected on the level-2
eigenfunctions with per-curve shrinkage lambda / (lambda + sigma_e).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .curves import CurveSet, Grid
from .errors import ConfigError, GridError, InsufficientDataError
from .mfpca import MfpcaModel

#: occasion label for subject-level rows when curves are pooled across occasions
POOLED_TOKEN = "__all__"

#: curve label for reconstructions that carry no curve-level scores
FIT_TOKEN = "__fit__"

BETWEEN_COLUMNS = [
    "subject_id",
    "occasion_id",
    "component",
    "raw",
    "score",
    "shrinkage",
    "n_curves",
]
WITHIN_COLUMNS = ["subject_id", "occasion_id", "curve_id", "component", "raw", "score"]


@dataclass(frozen=True)
class ScoreTable:
    """Between-unit and within-curve projection scores.

    ``between`` has one row per scoring unit and component with the raw mean
    projection, the shrunk score, the shrinkage factor, and the unit's curve
    count. ``within`` has one row per curve and level-2 component.
    """

    between: pd.DataFrame
    within: pd.DataFrame


@dataclass(frozen=True)
class FittedDecomposition:
    """Per-curve split into subject-level fit, residual, and curve-level fit."""

    subject_ids: tuple[str, ...]
    occasion_ids: tuple[str, ...]
    curve_ids: tuple[str, ...]
    level1_fit: np.ndarray
    residual: np.ndarray
    level2_fit: np.ndarray


def _check_grid(model: MfpcaModel, grid: Grid) -> None:
    if grid.n_points != model.grid.n_points or not np.allclose(
        grid.points, model.grid.points
    ):
        raise GridError("curves are not on the model grid")


def _shrinkage(eigenvalues: np.ndarray, noise: float) -> np.ndarray:
    """EBLUP factor lambda / (lambda + noise), defined as 0 where lambda is 0."""
    factors = np.zeros_like(eigenvalues)
    positive = eigenvalues > 0
    factors[positive] = eigenvalues[positive] / (eigenvalues[positive] + noise)
    return factors


def fpca_project(model: MfpcaModel, curve: np.ndarray) -> np.ndarray:
    """Project one curve on a single-level reference model.

    Returns the K1 inner products of (curve - mean) with the reference
    eigenfunctions under the grid quadrature.
    """
    if model.k2 != 0:
        raise ConfigError(
            "single-level projection requires a model with no level-2 components; "
            "use mfpca_project for two-level models"
        )
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (model.grid.n_points,):
        raise GridError("curve must match the model grid length")
    dev = curve - model.mean
    return (model.level1_eigenfunctions * model.grid.weights) @ dev


@dataclass(frozen=True)
class _UnitProjection:
    """Vectorized projection internals shared by the table builder and the harness."""

    unit_keys: list[tuple[str, str]]
    unit_sizes: np.ndarray
    raw_between: np.ndarray      # (units, K1) subject-average projections
    between: np.ndarray          # (units, K1) shrunk scores
    shrinkage: np.ndarray        # (units, K1)
    raw_within: np.ndarray       # (curves, K2)
    within: np.ndarray           # (curves, K2) shrunk scores
    level1_fit: np.ndarray
    residual: np.ndarray
    level2_fit: np.ndarray


def project_units(model: MfpcaModel, cs: CurveSet, per_occasion: bool = False) -> _UnitProjection:
    """Core two-level projection on (subject[, occasion]) scoring units."""
    _check_grid(model, cs.grid)
    w = model.grid.weights
    phi1 = model.level1_eigenfunctions
    phi2 = model.level2_eigenfunctions

    dev = cs.values - model.mean
    raw1 = dev @ (phi1 * w).T
    units = cs.indices_by_unit(per_occasion=per_occasion)

    n_units = len(units)
    sizes = np.fromiter((len(ix) for ix in units.values()), dtype=int, count=n_units)
    codes = np.empty(cs.n_curves, dtype=int)
    for u, ix in enumerate(units.values()):
        codes[ix] = u
    sums = np.column_stack(
        [np.bincount(codes, weights=raw1[:, k], minlength=n_units) for k in range(model.k1)]
    )
    raw_between = sums / sizes[:, None]
    lam1 = model.level1_eigenvalues
    with np.errstate(divide="ignore", invalid="ignore"):
        shrinkage = np.where(
            lam1[None, :] > 0,
            lam1[None, :] / (lam1[None, :] + model.sigma_e / sizes[:, None]),
            0.0,
        )
    between = shrinkage * raw_between
    level1_fit = between[codes] @ phi1
    residual = dev - level1_fit
    if model.k2:
        raw_within = residual @ (phi2 * w).T
        within = raw_within * _shrinkage(model.level2_eigenvalues, model.sigma_e)
        level2_fit = within @ phi2
    else:
        raw_within = np.zeros((cs.n_curves, 0))
        within = raw_within
        level2_fit = np.zeros_like(dev)

    return _UnitProjection(
        unit_keys=list(units),
        unit_sizes=sizes,
        raw_between=raw_between,
        between=between,
        shrinkage=shrinkage,
        raw_within=raw_within,
        within=within,
        level1_fit=level1_fit,
        residual=residual,
        level2_fit=level2_fit,
    )


def mfpca_project(
    model: MfpcaModel, cs: CurveSet, per_occasion: bool = False
) -> tuple[ScoreTable, FittedDecomposition]:
    """Two-level projection scores for a curve set against a reference model.

    Curves are pooled per subject by default; with ``per_occasion`` each
    (subject, occasion) pair is scored separately, which is what test-retest
    reliability analyses need.
    """
    proj = project_units(model, cs, per_occasion=per_occasion)
    k1, k2 = model.k1, model.k2
    n_units = len(proj.unit_keys)
    between = pd.DataFrame(
        {
            "subject_id": np.repeat([k[0] for k in proj.unit_keys], k1),
            "occasion_id": np.repeat([k[1] for k in proj.unit_keys], k1),
            "component": np.tile(np.arange(1, k1 + 1), n_units),
            "raw": proj.raw_between.ravel(),
            "score": proj.between.ravel(),
            "shrinkage": proj.shrinkage.ravel(),
            "n_curves": np.repeat(proj.unit_sizes, k1),
        }
    )
    if k2:
        within = pd.DataFrame(
            {
                "subject_id": np.repeat(cs.subject_ids, k2),
                "occasion_id": np.repeat(cs.occasion_ids, k2),
                "curve_id": np.repeat(cs.curve_ids, k2),
                "component": np.tile(np.arange(1, k2 + 1), cs.n_curves),
                "raw": proj.raw_within.ravel(),
                "score": proj.within.ravel(),
            }
        )
    else:
        within = pd.DataFrame({c: [] for c in WITHIN_COLUMNS})

    table = ScoreTable(between=between, within=within)
    decomposition = FittedDecomposition(
        subject_ids=cs.subject_ids,
        occasion_ids=cs.occasion_ids,
        curve_ids=cs.curve_ids,
        level1_fit=proj.level1_fit,
        residual=proj.residual,
        level2_fit=proj.level2_fit,
    )
    return table, decomposition


def reconstruct(model: MfpcaModel, scores: ScoreTable) -> CurveSet:
    """Synthesize fitted curves from a score table.

    Each output curve is mean + sum of between scores times level-1
    eigenfunctions + sum of its within scores times level-2 eigenfunctions.
    When the within table is empty, one curve per between unit is produced
    with curve id ``__fit__``.
    """
    if not len(scores.between) and not len(scores.within):
        raise InsufficientDataError("score table has no rows to reconstruct from")
    if len(scores.between) and scores.between["component"].max() > model.k1:
        raise GridError("between score component exceeds the model's level-1 count")
    if len(scores.within) and scores.within["component"].max() > model.k2:
        raise GridError("within score component exceeds the model's level-2 count")

    b_vectors: dict[tuple[str, str], np.ndarray] = {}
    for row in scores.between.itertuples(index=False):
        vec = b_vectors.setdefault((row.subject_id, row.occasion_id), np.zeros(model.k1))
        vec[row.component - 1] = row.score

    def unit_fit(subject: str, occasion: str) -> np.ndarray:
        vec = b_vectors.get((subject, occasion))
        if vec is None:
            vec = b_vectors.get((subject, POOLED_TOKEN), np.zeros(model.k1))
        return vec @ model.level1_eigenfunctions

    subjects, occasions, curves, values = [], [], [], []
    if len(scores.within):
        a_vectors: dict[tuple[str, str, str], np.ndarray] = {}
        for row in scores.within.itertuples(index=False):
            key = (row.subject_id, row.occasion_id, row.curve_id)
            vec = a_vectors.setdefault(key, np.zeros(model.k2))
            vec[row.component - 1] = row.score
        for (subject, occasion, curve), a in a_vectors.items():
            subjects.append(subject)
            occasions.append(occasion)
            curves.append(curve)
            values.append(model.mean + unit_fit(subject, occasion) + a @ model.level2_eigenfunctions)
    else:
        for subject, occasion in b_vectors:
            subjects.append(subject)
            occasions.append(occasion)
            curves.append(FIT_TOKEN)
            values.append(model.mean + unit_fit(subject, occasion))

    return CurveSet(
        grid=model.grid,
        subject_ids=tuple(subjects),
        occasion_ids=tuple(occasions),
        curve_ids=tuple(curves),
        values=np.vstack(values),
    )

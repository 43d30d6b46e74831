"""Simulation-study and validation-workflow orchestration.

A study compares candidate outcome summaries (landmark amplitudes, projection
scores from a single-level reference, subject-level scores from a two-level
reference) across disease-change scenarios. Every replication generates a
healthy group and a changed group over two occasions, computes each summary
per (subject, occasion), and scores the summaries on test-retest reliability
(ICC over the two occasions) and known-groups discrimination (Mann-Whitney p
and direction-free ROC AUC on occasion-1 values).

Replications are independent: each derives its random streams from
(base seed, scenario, replication), so results do not depend on the number of
workers.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .curves import CurveSet, subject_mean_curves
from .errors import ConfigError, GridError, JoinError, RankDeficiencyError, UndefinedStatisticError
from .mfpca import MfpcaModel, fit_fpca, fit_mfpca
from .preprocess import LandmarkSet
from .project import fpca_project, mfpca_project, project_units
from .simgen import (
    PopulationSpec,
    ScenarioSpec,
    apply_scenario,
    empirical_score_moments,
    synthesize_population,
    synthetic_reference_model,
)
from .valmetrics import icc, mann_whitney, ols_simple

DEFAULT_LANDMARKS = LandmarkSet(names=("P", "R", "T"), times=np.array([0.104, 0.25, 0.508]))
DEFAULT_PEAK_WINDOW = (0.5, 1.0)

SUMMARY_KINDS = ("scalar-amplitude", "fpca-score", "mfpca-score", "mean-peak")


@dataclass(frozen=True)
class SummaryDefinition:
    """One candidate outcome summary.

    Exactly one parameter is meaningful per kind: a landmark time for scalar
    amplitudes, a component index for projection scores, a (lo, hi) window
    for the windowed peak.
    """

    name: str
    kind: str
    landmark: float | None = None
    component: int | None = None
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in SUMMARY_KINDS:
            raise ConfigError(f"unknown summary kind {self.kind!r}")
        if self.kind == "scalar-amplitude" and self.landmark is None:
            raise ConfigError(f"summary {self.name!r} needs a landmark time")
        if self.kind in ("fpca-score", "mfpca-score") and (
            self.component is None or self.component < 1
        ):
            raise ConfigError(f"summary {self.name!r} needs a component index >= 1")
        if self.kind == "mean-peak" and (self.window is None or self.window[1] <= self.window[0]):
            raise ConfigError(f"summary {self.name!r} needs a (lo, hi) window")


def default_summaries(
    landmarks: LandmarkSet = DEFAULT_LANDMARKS, n_components: int = 4
) -> list[SummaryDefinition]:
    """Landmark amplitudes plus the first projection scores of both references."""
    out = [
        SummaryDefinition(name=f"{n}_amplitude", kind="scalar-amplitude", landmark=t)
        for n, t in zip(landmarks.names, landmarks.times)
    ]
    out += [
        SummaryDefinition(name=f"fpca_{k}", kind="fpca-score", component=k)
        for k in range(1, n_components + 1)
    ]
    out += [
        SummaryDefinition(name=f"mfpca_{k}", kind="mfpca-score", component=k)
        for k in range(1, n_components + 1)
    ]
    return out


def _landmark_grid_index(cs: CurveSet, time: float) -> int:
    idx = int(np.argmin(np.abs(cs.grid.points - time)))
    step = np.diff(cs.grid.points).max()
    if abs(cs.grid.points[idx] - time) > step / 2 + 1e-12:
        raise GridError(f"landmark time {time} is off the grid by more than half a step")
    return idx


def scalar_summaries(cs: CurveSet, landmarks: LandmarkSet = DEFAULT_LANDMARKS) -> pd.DataFrame:
    """Mean curve amplitude at each landmark per (subject, occasion).

    Landmarks snap to the nearest grid point within half a grid step.
    """
    indices = [_landmark_grid_index(cs, t) for t in landmarks.times]
    rows = []
    for (subject, occasion), ix in cs.indices_by_unit(per_occasion=True).items():
        at = cs.values[ix][:, indices].mean(axis=0)
        for name, value in zip(landmarks.names, at):
            rows.append((subject, occasion, name, float(value)))
    return pd.DataFrame(rows, columns=["subject_id", "occasion_id", "landmark", "value"])


def mean_peak(cs: CurveSet, window: tuple[float, float] = DEFAULT_PEAK_WINDOW) -> pd.DataFrame:
    """Mean over a unit's curves of the maximum value inside a window."""
    lo, hi = window
    mask = (cs.grid.points >= lo) & (cs.grid.points <= hi)
    if not mask.any():
        raise ConfigError(f"window ({lo}, {hi}) contains no grid points")
    rows = []
    for (subject, occasion), ix in cs.indices_by_unit(per_occasion=True).items():
        value = float(cs.values[ix][:, mask].max(axis=1).mean())
        rows.append((subject, occasion, value))
    return pd.DataFrame(rows, columns=["subject_id", "occasion_id", "value"])


@dataclass(frozen=True)
class ReferenceSet:
    """Everything needed to score and simulate against a fixed reference.

    Holds the two-level model, the single-level model fitted on reference
    subject means, the reference between-score matrix used for bootstrap
    resampling, and the empirical within-score moments.
    """

    model: MfpcaModel
    fpca: MfpcaModel
    between_scores: np.ndarray
    within_mean: np.ndarray
    within_cov: np.ndarray
    descriptor: dict = field(default_factory=dict)


def synthetic_reference(
    seed: int,
    n_reference_subjects: int = 59,
    curves_per_subject: int = 20,
    model: MfpcaModel | None = None,
    fpca_components: int = 4,
) -> ReferenceSet:
    """Reference built around a synthetic model.

    Between scores are one Gaussian draw per reference subject from the
    model's level-1 spectrum; within moments are the model's level-2 spectrum;
    the single-level reference is fitted to a generated reference population's
    subject means.
    """
    if model is None:
        model = synthetic_reference_model()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xB,)))
    between = rng.standard_normal((n_reference_subjects, model.k1)) * np.sqrt(
        model.level1_eigenvalues
    )
    ref_pop = synthesize_population(
        model,
        between,
        PopulationSpec(
            n_subjects=n_reference_subjects,
            curves_per_subject=curves_per_subject,
            occasions=1,
            seed=seed,
        ),
        resample_between=False,
        subject_prefix="ref",
    )
    fpca = fit_fpca(
        subject_mean_curves(ref_pop), k1=min(fpca_components, n_reference_subjects - 1)
    )
    return ReferenceSet(
        model=model,
        fpca=fpca,
        between_scores=between,
        within_mean=np.zeros(model.k2),
        within_cov=np.diag(model.level2_eigenvalues),
        descriptor={
            "kind": "synthetic",
            "seed": seed,
            "n_reference_subjects": n_reference_subjects,
            "curves_per_subject": curves_per_subject,
            "sigma_e": model.sigma_e,
            "level1_eigenvalues": model.level1_eigenvalues.tolist(),
            "level2_eigenvalues": model.level2_eigenvalues.tolist(),
        },
    )


def reference_from_curves(
    cs: CurveSet,
    pve1: float = 0.95,
    pve2: float = 0.90,
    k1: int | None = None,
    k2: int | None = None,
    fpca_components: int = 4,
) -> ReferenceSet:
    """Reference fitted to an observed healthy/control curve sample."""
    model = fit_mfpca(cs, pve1=pve1, pve2=pve2, k1=k1, k2=k2)
    proj = project_units(model, cs)
    w_mean, w_cov = empirical_score_moments(proj.within)
    fpca = fit_fpca(
        subject_mean_curves(cs), k1=min(fpca_components, len(cs.subjects()) - 1)
    )
    return ReferenceSet(
        model=model,
        fpca=fpca,
        between_scores=proj.between,
        within_mean=w_mean,
        within_cov=w_cov,
        descriptor={
            "kind": "fitted",
            "n_subjects": len(cs.subjects()),
            "n_curves": cs.n_curves,
        },
    )


@dataclass(frozen=True)
class StudyConfig:
    """Design of one simulation study."""

    scenarios: tuple[ScenarioSpec, ...]
    replications: int
    base_seed: int
    n_subjects: int = 59
    curves_per_subject: int | tuple[int, int] = 20
    occasions: int = 2
    summaries: tuple[SummaryDefinition, ...] | None = None
    icc_pooling: str = "both"
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if self.icc_pooling not in ("both", "group1"):
            raise ConfigError("icc_pooling must be 'both' or 'group1'")
        if self.occasions < 2:
            raise ConfigError("reliability needs at least two occasions")

    def to_dict(self) -> dict:
        return {
            "scenarios": [s.to_dict() for s in self.scenarios],
            "replications": self.replications,
            "base_seed": self.base_seed,
            "n_subjects": self.n_subjects,
            "curves_per_subject": list(self.curves_per_subject)
            if isinstance(self.curves_per_subject, tuple)
            else self.curves_per_subject,
            "occasions": self.occasions,
            "summaries": None
            if self.summaries is None
            else [s.name for s in self.summaries],
            "icc_pooling": self.icc_pooling,
        }


@dataclass(frozen=True)
class StudyResult:
    """Per-replication metrics plus their means over replications."""

    per_replication: pd.DataFrame
    aggregate: pd.DataFrame
    provenance: dict


def config_hash(config: StudyConfig, reference: ReferenceSet) -> str:
    doc = {"config": config.to_dict(), "reference": reference.descriptor}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _derived_seed(base: int, *path: int) -> int:
    state = np.random.SeedSequence(entropy=base, spawn_key=tuple(path)).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)


def compute_summaries(
    cs: CurveSet, reference: ReferenceSet, summaries: tuple[SummaryDefinition, ...]
) -> pd.DataFrame:
    """Evaluate every summary per (subject, occasion) of one curve set.

    Scalar amplitudes read the unit's mean curve at the landmark grid point;
    single-level scores project the unit's mean curve on the reference;
    two-level scores are the per-occasion subject-level shrunk projections.
    Returns a wide frame: subject_id, occasion_id, one column per summary.
    """
    units = cs.indices_by_unit(per_occasion=True)
    unit_keys = list(units)
    mean_curves = np.vstack([cs.values[ix].mean(axis=0) for ix in units.values()])
    out = pd.DataFrame(
        {
            "subject_id": [k[0] for k in unit_keys],
            "occasion_id": [k[1] for k in unit_keys],
        }
    )

    fpca_scores = None
    mfpca_scores = None
    for s in summaries:
        if s.kind == "scalar-amplitude":
            out[s.name] = mean_curves[:, _landmark_grid_index(cs, s.landmark)]
        elif s.kind == "mean-peak":
            lo, hi = s.window
            mask = (cs.grid.points >= lo) & (cs.grid.points <= hi)
            if not mask.any():
                raise ConfigError(f"window ({lo}, {hi}) contains no grid points")
            out[s.name] = [
                float(cs.values[ix][:, mask].max(axis=1).mean()) for ix in units.values()
            ]
        elif s.kind == "fpca-score":
            if fpca_scores is None:
                phi_w = reference.fpca.level1_eigenfunctions * reference.fpca.grid.weights
                fpca_scores = (mean_curves - reference.fpca.mean) @ phi_w.T
            if s.component > fpca_scores.shape[1]:
                raise ConfigError(
                    f"summary {s.name!r} asks for component {s.component} but the "
                    f"single-level reference has {fpca_scores.shape[1]}"
                )
            out[s.name] = fpca_scores[:, s.component - 1]
        else:
            if mfpca_scores is None:
                proj = project_units(reference.model, cs, per_occasion=True)
                if proj.unit_keys != unit_keys:
                    raise RuntimeError("scoring units out of order")  # pragma: no cover
                mfpca_scores = proj.between
            if s.component > reference.model.k1:
                raise ConfigError(
                    f"summary {s.name!r} asks for component {s.component} but the "
                    f"two-level reference has {reference.model.k1}"
                )
            out[s.name] = mfpca_scores[:, s.component - 1]
    return out


def _replication_metrics(
    reference: ReferenceSet,
    config: StudyConfig,
    scenario_index: int,
    replication: int,
) -> list[dict]:
    scenario = config.scenarios[scenario_index]
    summaries = config.summaries

    def population(group: int) -> CurveSet:
        spec = PopulationSpec(
            n_subjects=config.n_subjects,
            curves_per_subject=config.curves_per_subject,
            occasions=config.occasions,
            seed=_derived_seed(config.base_seed, scenario_index, replication, group),
        )
        return synthesize_population(
            reference.model,
            reference.between_scores,
            spec,
            within_mean=reference.within_mean,
            within_cov=reference.within_cov,
            subject_prefix=f"g{group + 1}s",
        )

    group1 = population(0)
    group2 = apply_scenario(
        population(1),
        scenario,
        seed=_derived_seed(config.base_seed, scenario_index, replication, 2),
    )

    values1 = compute_summaries(group1, reference, summaries)
    values2 = compute_summaries(group2, reference, summaries)
    pooled = values1 if config.icc_pooling == "group1" else pd.concat(
        [values1, values2], ignore_index=True
    )
    sub_labels, sub_codes = np.unique(pooled["subject_id"].to_numpy(), return_inverse=True)
    occ_labels, occ_codes = np.unique(pooled["occasion_id"].to_numpy(), return_inverse=True)
    occ1_mask1 = values1["occasion_id"].to_numpy() == "occ1"
    occ1_mask2 = values2["occasion_id"].to_numpy() == "occ1"

    rows = []
    for s in summaries:
        matrix = np.full((sub_labels.size, occ_labels.size), np.nan)
        matrix[sub_codes, occ_codes] = pooled[s.name].to_numpy()
        reliability = icc(matrix)
        test = mann_whitney(
            values1[s.name].to_numpy()[occ1_mask1], values2[s.name].to_numpy()[occ1_mask2]
        )
        rows.append(
            {
                "scenario": scenario.kind,
                "summary": s.name,
                "replication": replication,
                "icc_a1": reliability.icc_a1,
                "icc_c1": reliability.icc_c1,
                "mw_p": test.p_value,
                "auc": max(test.auc, 1.0 - test.auc),
            }
        )
    return rows


def _replication_task(args) -> list[dict]:
    reference, config, scenario_index, replication = args
    try:
        return _replication_metrics(reference, config, scenario_index, replication)
    except Exception as exc:
        kind = config.scenarios[scenario_index].kind
        raise RuntimeError(
            f"replication {replication} of scenario {kind!r} failed "
            f"(base seed {config.base_seed}): {exc}"
        ) from exc


def run_study(reference: ReferenceSet, config: StudyConfig) -> StudyResult:
    """Run the full scenarios-by-replications study.

    Output is invariant to ``config.workers``: every replication recomputes
    its streams from (base seed, scenario, replication) and rows are assembled
    in task order. When ``config.summaries`` is unset, the default summary set
    is used with components capped at what the reference provides.
    """
    if config.summaries is None:
        n_components = min(4, reference.model.k1, reference.fpca.k1)
        config = replace(config, summaries=tuple(default_summaries(n_components=n_components)))
    tasks = [
        (reference, config, s, r)
        for s in range(len(config.scenarios))
        for r in range(config.replications)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_replication_task, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))
    else:
        chunks = [_replication_task(t) for t in tasks]

    per_replication = pd.DataFrame([row for chunk in chunks for row in chunk])
    aggregate = (
        per_replication.groupby(["scenario", "summary"], sort=False)[
            ["icc_a1", "icc_c1", "mw_p", "auc"]
        ]
        .mean()
        .reset_index()
        .rename(
            columns={
                "icc_a1": "mean_icc_a1",
                "icc_c1": "mean_icc_c1",
                "mw_p": "mean_mw_p",
                "auc": "mean_auc",
            }
        )
    )
    provenance = {
        "config_hash": config_hash(config, reference),
        "base_seed": config.base_seed,
        "replications": config.replications,
        "scenarios": [s.kind for s in config.scenarios],
    }
    return StudyResult(per_replication=per_replication, aggregate=aggregate, provenance=provenance)


def _condition_summaries(
    model: MfpcaModel,
    cs: CurveSet,
    components: tuple[int, ...],
    window: tuple[float, float],
) -> pd.DataFrame:
    """Per-subject summaries for one condition: pooled two-level scores + peak."""
    table, _ = mfpca_project(model, cs)
    between = table.between
    columns = {}
    for k in components:
        if k > model.k1:
            raise ConfigError(f"component {k} exceeds the model's level-1 count")
        sub = between[between["component"] == k].set_index("subject_id")["score"]
        columns[f"mfpca_{k}"] = sub
    lo, hi = window
    mask = (cs.grid.points >= lo) & (cs.grid.points <= hi)
    peaks = {
        subject: float(cs.values[ix][:, mask].max(axis=1).mean())
        for subject, ix in cs.indices_by_subject().items()
    }
    columns["mean_peak"] = pd.Series(peaks)
    return pd.DataFrame(columns)


def validate_workflow(
    model: MfpcaModel,
    curves_a: CurveSet,
    curves_b: CurveSet,
    clinical: pd.DataFrame,
    components: tuple[int, ...] = (1, 2, 3),
    peak_window: tuple[float, float] = DEFAULT_PEAK_WINDOW,
) -> pd.DataFrame:
    """Convergent-validity and responsiveness analysis against clinical outcomes.

    ``clinical`` has one row per subject: a ``subject_id`` column plus paired
    columns ``<outcome>_a`` / ``<outcome>_b`` holding each outcome under the
    two conditions. Cross-sectional rows regress each condition-A summary on
    each condition-A outcome; change rows regress (B - A) summary differences
    on (B - A) outcome differences. Degenerate regressions (either side with
    zero variance) are flagged, not fabricated.
    """
    if "subject_id" not in clinical.columns:
        raise ConfigError("clinical table needs a subject_id column")
    clinical = clinical.set_index(clinical["subject_id"].astype(str))
    outcomes = sorted(
        {
            c[: -len("_a")]
            for c in clinical.columns
            if c.endswith("_a") and f"{c[:-2]}_b" in clinical.columns
        }
    )
    if not outcomes:
        raise ConfigError("clinical table has no <outcome>_a / <outcome>_b column pairs")

    summary_a = _condition_summaries(model, curves_a, components, peak_window)
    summary_b = _condition_summaries(model, curves_b, components, peak_window)
    curve_subjects = sorted(set(summary_a.index) | set(summary_b.index))
    missing = [s for s in curve_subjects if s not in clinical.index]
    if missing:
        raise JoinError(f"subjects missing from the clinical table: {', '.join(missing)}")
    shared = [s for s in summary_a.index if s in summary_b.index]

    rows = []

    def regress(analysis: str, outcome: str, name: str, x: np.ndarray, y: np.ndarray) -> None:
        base = {"analysis": analysis, "outcome": outcome, "summary": name, "n": int(x.size)}
        fit = None
        if x.size >= 3 and np.ptp(x) > 0 and np.ptp(y) > 0:
            try:
                fit = ols_simple(x, y)
            except (RankDeficiencyError, UndefinedStatisticError):
                fit = None
        if fit is None:
            rows.append(
                base
                | {
                    "slope": np.nan,
                    "intercept": np.nan,
                    "r_squared": np.nan,
                    "p_slope": np.nan,
                    "zero_variance": True,
                }
            )
        else:
            rows.append(
                base
                | {
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "p_slope": fit.p_slope,
                    "zero_variance": False,
                }
            )

    for outcome in outcomes:
        x_a = clinical.loc[summary_a.index, f"{outcome}_a"].to_numpy(dtype=float)
        for name in summary_a.columns:
            regress("cross_sectional", outcome, name, x_a, summary_a[name].to_numpy())
        dx = (
            clinical.loc[shared, f"{outcome}_b"].to_numpy(dtype=float)
            - clinical.loc[shared, f"{outcome}_a"].to_numpy(dtype=float)
        )
        for name in summary_a.columns:
            dy = summary_b.loc[shared, name].to_numpy() - summary_a.loc[shared, name].to_numpy()
            regress("change", outcome, name, dx, dy)

    return pd.DataFrame(rows)

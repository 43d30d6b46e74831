"""Synthetic two-occasion curve populations and disease-change scenarios.

Populations are generated from a reference model: each simulated subject
draws one whole row of a reference between-score matrix (row-wise bootstrap,
preserving cross-component dependence and signs), shares it across both
measurement occasions, and draws fresh within-curve score vectors from a
multivariate normal per occasion. Disease scenarios then modify the curves
with localized Gaussian perturbations, multiplicatively or additively.

All randomness is derived from splittable seed sequences keyed by
(seed, subject[, occasion]) so output never depends on scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import CurveSet, Grid
from .errors import (
    ConfigError,
    CovarianceError,
    InsufficientDataError,
    OrthonormalizationError,
)
from .mfpca import MfpcaModel

SCENARIO_KINDS = (
    "no_change",
    "flattened_t",
    "changing_t",
    "all_flattened",
    "st_elevation",
)

#: canonical landmark positions on the registered cycle (P, R, T peaks)
LANDMARK_CENTERS = {"P": 0.104, "R": 0.25, "T": 0.508}


@dataclass(frozen=True)
class Bump:
    """One Gaussian perturbation: amplitude, center, width."""

    amplitude: float
    center: float
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigError("bump width must be positive")
        if not 0 < self.center < 1:
            raise ConfigError("bump center must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class ScenarioSpec:
    """A disease-change scenario applied to group-2 curves.

    ``bumps`` hold the perturbations; a mixture scenario instead draws the
    amplitude of its single bump from ``mixture_amplitudes`` per unit, where
    the unit is a subject or a (subject, occasion) pair. Multiplicative mode
    applies the product of (1 - bump) factors; additive mode adds the bumps.
    """

    kind: str
    bumps: tuple[Bump, ...] = ()
    mixture_amplitudes: tuple[float, ...] | None = None
    mixture_probs: tuple[float, ...] | None = None
    mixture_unit: str = "subject_occasion"
    mode: str = "multiplicative"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.mode not in ("multiplicative", "additive"):
            raise ConfigError(f"unknown scenario mode {self.mode!r}")
        if self.mixture_unit not in ("subject", "subject_occasion"):
            raise ConfigError(f"unknown mixture unit {self.mixture_unit!r}")
        if (self.mixture_amplitudes is None) != (self.mixture_probs is None):
            raise ConfigError("mixture amplitudes and probabilities go together")
        if self.mixture_probs is not None:
            probs = np.asarray(self.mixture_probs, dtype=float)
            if probs.size != len(self.mixture_amplitudes) or np.any(probs < 0):
                raise ConfigError("one nonnegative probability per mixture amplitude")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise ConfigError("mixture probabilities must sum to 1")
            if len(self.bumps) != 1:
                raise ConfigError("mixture scenarios use exactly one bump template")

    @classmethod
    def standard(cls, kind: str, **overrides) -> "ScenarioSpec":
        """The named scenario with its standard constants.

        flattened_t scales by (1 - p) with A=0.5 at the T peak; changing_t
        draws A in {0.2, 0.7} per unit; all_flattened applies A=0.2 bumps at
        the P, R and T peaks; st_elevation adds a bump of 120 signal units
        between the R and T peaks. Any field can be overridden.
        """
        base: dict
        if kind == "no_change":
            base = dict(kind=kind, bumps=())
        elif kind == "flattened_t":
            base = dict(kind=kind, bumps=(Bump(0.5, LANDMARK_CENTERS["T"], 0.1),))
        elif kind == "changing_t":
            base = dict(
                kind=kind,
                bumps=(Bump(1.0, LANDMARK_CENTERS["T"], 0.1),),
                mixture_amplitudes=(0.2, 0.7),
                mixture_probs=(0.5, 0.5),
            )
        elif kind == "all_flattened":
            base = dict(
                kind=kind,
                bumps=tuple(Bump(0.2, c, 0.1) for c in LANDMARK_CENTERS.values()),
            )
        elif kind == "st_elevation":
            base = dict(kind=kind, bumps=(Bump(120.0, 0.37, 0.05),), mode="additive")
        else:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "mode": self.mode}
        doc["bumps"] = [
            {"amplitude": b.amplitude, "center": b.center, "width": b.width}
            for b in self.bumps
        ]
        if self.mixture_amplitudes is not None:
            doc["mixture_amplitudes"] = list(self.mixture_amplitudes)
            doc["mixture_probs"] = list(self.mixture_probs)
            doc["mixture_unit"] = self.mixture_unit
        return doc

    @classmethod
    def from_dict(cls, doc) -> "ScenarioSpec":
        """Build a spec from a configuration entry (a kind string or a mapping)."""
        if isinstance(doc, str):
            return cls.standard(doc)
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ConfigError("scenario entry must be a kind string or a mapping with 'kind'")
        doc = dict(doc)
        kind = doc.pop("kind")
        if "bumps" in doc:
            doc["bumps"] = tuple(
                Bump(b["amplitude"], b["center"], b["width"]) for b in doc["bumps"]
            )
        for key in ("mixture_amplitudes", "mixture_probs"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        return cls.standard(kind, **doc)


@dataclass(frozen=True)
class PopulationSpec:
    """Size and seeding of one simulated population."""

    n_subjects: int
    curves_per_subject: int | tuple[int, int] = 20
    occasions: int = 2
    seed: int = 0

    def __post_init__(self):
        cps = self.curves_per_subject
        lo = cps[0] if isinstance(cps, tuple) else cps
        if self.n_subjects < 1 or self.occasions < 1 or lo < 1:
            raise ConfigError("population counts must be at least 1")
        if isinstance(cps, tuple) and (len(cps) != 2 or cps[1] < cps[0]):
            raise ConfigError("curves_per_subject range must be (lo, hi) with hi >= lo")


def gaussian_bump(t, amplitude: float, center: float, width: float):
    """Gaussian perturbation A * exp(-((t - c) / tau)^2 / 2)."""
    if width <= 0:
        raise ConfigError("width must be positive")
    t = np.asarray(t, dtype=float)
    return amplitude * np.exp(-0.5 * ((t - center) / width) ** 2)


def orthonormalize_functions(functions: np.ndarray, grid: Grid) -> np.ndarray:
    """Gram-Schmidt under the grid inner product, positive-peak signs.

    Raises :class:`OrthonormalizationError` when a seed function is (nearly)
    linearly dependent on its predecessors.
    """
    functions = np.asarray(functions, dtype=float)
    w = grid.weights
    out = np.empty_like(functions)
    for i, f in enumerate(functions):
        v = f.astype(float).copy()
        scale = float(np.sqrt((f * f) @ w))
        for _ in range(2):  # re-orthogonalize once for numerical safety
            for q in out[:i]:
                v -= float((v * q) @ w) * q
        norm = float(np.sqrt((v * v) @ w))
        if norm <= 1e-10 * max(scale, 1.0):
            raise OrthonormalizationError(f"seed function {i} is linearly dependent")
        v /= norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out[i] = v
    return out


def _score_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky-style factor of a score covariance, with 1e-10 jitter fallback."""
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0 or not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + 1e-10 * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        raise CovarianceError(
            "within-score covariance is not positive semi-definite"
        ) from None


def synthesize_population(
    model: MfpcaModel,
    between_scores: np.ndarray,
    spec: PopulationSpec,
    *,
    within_mean: np.ndarray | None = None,
    within_cov: np.ndarray | None = None,
    resample_between: bool = True,
    subject_prefix: str = "sim",
) -> CurveSet:
    """Generate a hierarchical curve population from a reference model.

    Each subject draws one row of ``between_scores`` uniformly with
    replacement and keeps it for every occasion; each curve on each occasion
    draws a fresh within-score vector from N(within_mean, within_cov). The
    within moments default to mean zero and the model's level-2 eigenvalue
    diagonal. With ``resample_between`` off, subject i uses row i directly.
    """
    between_scores = np.atleast_2d(np.asarray(between_scores, dtype=float))
    if between_scores.shape[0] < 1 or between_scores.shape[1] != model.k1:
        raise InsufficientDataError(
            f"between-score matrix must be (n_ref, {model.k1}) with n_ref >= 1"
        )
    if not resample_between and spec.n_subjects > between_scores.shape[0]:
        raise InsufficientDataError(
            "without resampling the between-score matrix needs one row per subject"
        )
    k2 = model.k2
    if within_mean is None:
        within_mean = np.zeros(k2)
    if within_cov is None:
        within_cov = np.diag(model.level2_eigenvalues)
    within_mean = np.asarray(within_mean, dtype=float).reshape(k2)
    within_cov = np.asarray(within_cov, dtype=float).reshape(k2, k2)
    factor = _score_factor(within_cov)

    cps = spec.curves_per_subject
    phi1 = model.level1_eigenfunctions
    phi2 = model.level2_eigenfunctions
    subjects, occasions, curves, blocks = [], [], [], []
    width = max(4, len(str(spec.n_subjects)))
    occ_labels = [f"occ{m + 1}" for m in range(spec.occasions)]
    for i in range(spec.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(i,)))
        n_i = int(rng.integers(cps[0], cps[1] + 1)) if isinstance(cps, tuple) else cps
        row = int(rng.integers(0, between_scores.shape[0])) if resample_between else i
        subject_part = model.mean + between_scores[row] @ phi1
        n_rows = spec.occasions * n_i
        if k2:
            xi = within_mean + rng.standard_normal((n_rows, k2)) @ factor.T
            blocks.append(subject_part + xi @ phi2)
        else:
            blocks.append(np.broadcast_to(subject_part, (n_rows, subject_part.size)))
        sid = f"{subject_prefix}{i + 1:0{width}d}"
        subjects.extend([sid] * n_rows)
        for m in range(spec.occasions):
            occasions.extend([occ_labels[m]] * n_i)
            curves.extend(f"c{j + 1:03d}" for j in range(n_i))
    return CurveSet(
        grid=model.grid,
        subject_ids=tuple(subjects),
        occasion_ids=tuple(occasions),
        curve_ids=tuple(curves),
        values=np.vstack(blocks),
    )


def empirical_score_moments(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance (denominator n - 1) of score vectors."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n, k = scores.shape
    if n < k + 1:
        raise InsufficientDataError(
            f"need at least {k + 1} score vectors to estimate {k}-dimensional moments"
        )
    mean = scores.mean(axis=0)
    dev = scores - mean
    cov = dev.T @ dev / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def apply_scenario(cs: CurveSet, spec: ScenarioSpec, seed: int | None = None) -> CurveSet:
    """Apply a disease-change scenario to a curve population.

    ``no_change`` returns the input untouched. Mixture scenarios need a seed;
    the drawn amplitude is fixed within each mixture unit so that repeated
    curves of a unit share the same change.
    """
    if spec.kind == "no_change":
        return cs
    t = cs.grid.points

    if spec.mixture_amplitudes is None:
        if spec.mode == "multiplicative":
            multiplier = np.ones_like(t)
            for b in spec.bumps:
                multiplier *= 1.0 - gaussian_bump(t, b.amplitude, b.center, b.width)
            return cs.with_values(cs.values * multiplier)
        offset = np.zeros_like(t)
        for b in spec.bumps:
            offset += gaussian_bump(t, b.amplitude, b.center, b.width)
        return cs.with_values(cs.values + offset)

    if seed is None:
        raise ConfigError("mixture scenarios need a seed")
    template = spec.bumps[0]
    amplitudes = np.asarray(spec.mixture_amplitudes, dtype=float)
    probs = np.asarray(spec.mixture_probs, dtype=float)

    subjects = cs.subjects()
    subject_index = {s: i for i, s in enumerate(subjects)}
    occasion_index: dict[str, int] = {}
    for o in cs.occasion_ids:
        occasion_index.setdefault(o, len(occasion_index))

    drawn: dict[tuple[int, int], float] = {}

    def amplitude_for(s: str, o: str) -> float:
        si = subject_index[s]
        oi = occasion_index[o] if spec.mixture_unit == "subject_occasion" else -1
        key = (si, oi)
        if key not in drawn:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(si,) if oi < 0 else (si, oi))
            )
            drawn[key] = float(amplitudes[rng.choice(len(amplitudes), p=probs)])
        return drawn[key]

    values = cs.values.copy()
    for i in range(cs.n_curves):
        a = amplitude_for(cs.subject_ids[i], cs.occasion_ids[i])
        p = gaussian_bump(t, a, template.center, template.width)
        if spec.mode == "multiplicative":
            values[i] *= 1.0 - p
        else:
            values[i] += p
    return cs.with_values(values)


_DEFAULT_MEAN_BUMPS = ((100.0, 0.104, 0.02), (800.0, 0.25, 0.015), (200.0, 0.508, 0.04))

# Subject-level modes: amplitude variation at the R, T, ST and P regions.
_DEFAULT_LEVEL1_SEEDS = (
    ("bump", 0.25, 0.05),
    ("bump", 0.508, 0.06),
    ("bump", 0.37, 0.05),
    ("bump", 0.104, 0.03),
)
_DEFAULT_LEVEL1_EIGENVALUES = (55.0, 24.0, 16.0, 12.0)

# Curve-level modes: baseline drift plus micro-timing wiggles at the peaks.
_DEFAULT_LEVEL2_SEEDS = (
    ("bump", 0.65, 0.12),
    ("bump", 0.17, 0.08),
    ("slope", 0.508, 0.07),
    ("slope", 0.25, 0.04),
    ("slope", 0.104, 0.03),
)
_DEFAULT_LEVEL2_EIGENVALUES = (80.0, 60.0, 40.0, 25.0, 15.0)


def _seed_function(shape: str, center: float, width: float, t: np.ndarray) -> np.ndarray:
    g = np.exp(-0.5 * ((t - center) / width) ** 2)
    if shape == "bump":
        return g
    if shape == "slope":
        return -(t - center) / width * g
    raise ConfigError(f"unknown seed shape {shape!r}")


def synthetic_reference_model(
    n_points: int = 256,
    *,
    grid: Grid | None = None,
    mean_bumps=_DEFAULT_MEAN_BUMPS,
    level1_seeds=_DEFAULT_LEVEL1_SEEDS,
    level1_eigenvalues=_DEFAULT_LEVEL1_EIGENVALUES,
    level2_seeds=_DEFAULT_LEVEL2_SEEDS,
    level2_eigenvalues=_DEFAULT_LEVEL2_EIGENVALUES,
    sigma_e: float = 1.0,
) -> MfpcaModel:
    """A fully synthetic reference model with cycle-like structure.

    The mean is a sum of Gaussian bumps at the canonical P/R/T landmark
    positions; eigenfunctions are Gram-Schmidt orthonormalized localized
    seeds (``bump`` or ``slope`` shapes); eigenvalues are the supplied
    decaying spectra. Useful wherever a reproducible reference population is
    needed without real recordings.
    """
    if grid is None:
        grid = Grid.uniform(n_points)
    t = grid.points
    mean = np.zeros_like(t)
    for a, c, wdt in mean_bumps:
        mean += gaussian_bump(t, a, c, wdt)

    lam1 = np.asarray(level1_eigenvalues, dtype=float)
    lam2 = np.asarray(level2_eigenvalues, dtype=float)
    for lam in (lam1, lam2):
        if lam.size and (np.any(lam < 0) or np.any(np.diff(lam) > 0)):
            raise ConfigError("eigenvalue spectra must be nonnegative and nonincreasing")
    if len(level1_seeds) != lam1.size or len(level2_seeds) != lam2.size:
        raise ConfigError("one seed function per eigenvalue required")

    phi1 = orthonormalize_functions(
        np.vstack([_seed_function(s, c, wdt, t) for s, c, wdt in level1_seeds]), grid
    )
    if len(level2_seeds):
        phi2 = orthonormalize_functions(
            np.vstack([_seed_function(s, c, wdt, t) for s, c, wdt in level2_seeds]), grid
        )
    else:
        phi2 = np.empty((0, t.size))

    model = MfpcaModel(
        grid=grid,
        mean=mean,
        level1_eigenvalues=lam1,
        level1_eigenfunctions=phi1,
        level2_eigenvalues=lam2,
        level2_eigenfunctions=phi2,
        sigma_e=sigma_e,
        metadata={
            "fit": "synthetic",
            "mean_bumps": [list(b) for b in mean_bumps],
            "level1_seeds": [list(s) for s in level1_seeds],
            "level2_seeds": [list(s) for s in level2_seeds],
        },
    )
    model.validate()
    return model

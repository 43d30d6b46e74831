"""Two-level functional PCA: covariance estimation, eigenstructure, model I/O.

The model decomposes hierarchical curves into a mean function, subject-level
(level-1) eigenfunctions capturing differences between subjects, curve-level
(level-2) eigenfunctions capturing repeat-to-repeat variation within subject,
and a residual projection-noise variance. Covariances are estimated by
cross-product method of moments: the total covariance averages outer products
of centered curves, the between-subject covariance averages cross products of
distinct curves within the same subject, and the within-subject covariance is
their difference.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .curves import CurveSet, Grid
from .errors import (
    ConfigError,
    CorruptModelError,
    GridError,
    InsufficientDataError,
    ModelVersionError,
    SymmetryError,
    WithinLevelUnidentifiableError,
)

MODEL_FORMAT_VERSION = 1

ORTHONORMALITY_TOL = 1e-8


@dataclass
class MfpcaModel:
    """A fitted (or synthetic) two-level reference model.

    Eigenfunctions are stored one per row, orthonormal within each level under
    the grid inner product, with the largest-magnitude entry of each function
    positive. ``sigma_e`` is the projection-noise variance used for score
    shrinkage. A single-level model has zero level-2 components.
    """

    grid: Grid
    mean: np.ndarray
    level1_eigenvalues: np.ndarray
    level1_eigenfunctions: np.ndarray
    level2_eigenvalues: np.ndarray
    level2_eigenfunctions: np.ndarray
    sigma_e: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.level1_eigenvalues = np.asarray(self.level1_eigenvalues, dtype=float)
        self.level2_eigenvalues = np.asarray(self.level2_eigenvalues, dtype=float)
        L = self.grid.n_points
        self.level1_eigenfunctions = np.asarray(
            self.level1_eigenfunctions, dtype=float
        ).reshape(-1, L)
        self.level2_eigenfunctions = np.asarray(
            self.level2_eigenfunctions, dtype=float
        ).reshape(-1, L)
        self.sigma_e = float(self.sigma_e)

    @property
    def k1(self) -> int:
        return self.level1_eigenvalues.size

    @property
    def k2(self) -> int:
        return self.level2_eigenvalues.size

    def validate(self, tol: float = ORTHONORMALITY_TOL) -> None:
        """Check all model invariants; raise :class:`CorruptModelError` otherwise."""
        L = self.grid.n_points
        if self.mean.shape != (L,) or not np.all(np.isfinite(self.mean)):
            raise CorruptModelError("mean must be a finite vector of grid length")
        if self.sigma_e < 0 or not np.isfinite(self.sigma_e):
            raise CorruptModelError("sigma_e must be finite and nonnegative")
        if self.k1 < 1:
            raise CorruptModelError("model needs at least one level-1 component")
        for label, vals, funcs in (
            ("level1", self.level1_eigenvalues, self.level1_eigenfunctions),
            ("level2", self.level2_eigenvalues, self.level2_eigenfunctions),
        ):
            if funcs.shape != (vals.size, L):
                raise CorruptModelError(f"{label} eigenfunction shape mismatch")
            if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(funcs)):
                raise CorruptModelError(f"{label} contains non-finite entries")
            if np.any(vals < 0):
                raise CorruptModelError(f"{label} eigenvalues must be nonnegative")
            if np.any(np.diff(vals) > 0):
                raise CorruptModelError(f"{label} eigenvalues must be nonincreasing")
            if vals.size:
                gram = (funcs * self.grid.weights) @ funcs.T
                if np.max(np.abs(gram - np.eye(vals.size))) > tol:
                    raise CorruptModelError(
                        f"{label} eigenfunctions are not orthonormal under the grid "
                        f"inner product (tolerance {tol})"
                    )
                peaks = funcs[np.arange(vals.size), np.argmax(np.abs(funcs), axis=1)]
                if np.any(peaks < 0):
                    raise CorruptModelError(
                        f"{label} eigenfunctions violate the positive-peak sign convention"
                    )


@dataclass(frozen=True)
class CovariancePair:
    """Total, between-subject, and within-subject covariance matrices."""

    total: np.ndarray
    between: np.ndarray
    within: np.ndarray


def _symmetrize(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + K.T)


def estimate_covariances(cs: CurveSet, mean: np.ndarray) -> CovariancePair:
    """Method-of-moments covariance estimators for a two-level sample.

    With centered curves d_ij = y_ij - mean, the total covariance is the
    average of d_ij d_ij', the between-subject covariance averages
    d_ij d_ik' over ordered pairs j != k within subject, and the
    within-subject covariance is their difference. All three are symmetrized.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (cs.grid.n_points,):
        raise GridError("mean must match the grid length")
    dev = cs.values - mean
    groups = cs.indices_by_subject()
    n_pairs = sum(len(ix) * (len(ix) - 1) for ix in groups.values())
    if n_pairs == 0:
        raise WithinLevelUnidentifiableError(
            "every subject has a single curve; need a subject with 2 or more"
        )
    total = _symmetrize(dev.T @ dev / cs.n_curves)
    cross = np.zeros_like(total)
    for ix in groups.values():
        s = dev[ix].sum(axis=0)
        cross += np.outer(s, s)
    cross -= dev.T @ dev
    between = _symmetrize(cross / n_pairs)
    within = total - between
    return CovariancePair(total=total, between=between, within=within)


def eigendecompose_operator(K: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Eigenstructure of a covariance operator under the grid quadrature.

    Solves the weighted problem via M = W^(1/2) K W^(1/2) and maps eigenvectors
    back with W^(-1/2), so the returned eigenfunctions (rows) are orthonormal
    under the grid inner product. Negative eigenvalues are clipped to zero,
    order is descending, and each eigenfunction has its largest-magnitude
    entry positive.
    """
    K = np.asarray(K, dtype=float)
    L = grid.n_points
    if K.shape != (L, L):
        raise GridError("operator must be L x L for the grid")
    if np.max(np.abs(K - K.T)) > 1e-8:
        raise SymmetryError("operator is not symmetric within 1e-8")
    s = np.sqrt(grid.weights)
    M = _symmetrize(s[:, None] * K * s[None, :])
    vals, vecs = np.linalg.eigh(M)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    funcs = (vecs[:, order] / s[:, None]).T
    peaks = funcs[np.arange(L), np.argmax(np.abs(funcs), axis=1)]
    funcs[peaks < 0] *= -1.0
    return vals, funcs


def select_n_components(eigenvalues: np.ndarray, pve: float) -> int:
    """Smallest K whose cumulative eigenvalue fraction reaches ``pve``.

    A spectrum with zero total variance keeps a single (zero) component.
    """
    if not 0 < pve <= 1:
        raise ConfigError("pve must lie in (0, 1]")
    total = float(np.sum(eigenvalues))
    if total <= 0:
        return 1
    fractions = np.cumsum(eigenvalues) / total
    return int(np.argmax(fractions >= pve)) + 1


def _project_rows(dev: np.ndarray, funcs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Inner products of each row of ``dev`` with each eigenfunction."""
    return dev @ (funcs * weights).T


def _truncation_residual_variance(
    cs: CurveSet,
    mean: np.ndarray,
    level1: np.ndarray,
    level2: np.ndarray,
) -> float:
    """Mean squared per-point residual after one unshrunk reconstruction pass.

    Subject-average level-1 projections define the subject fit; raw level-2
    projections of the leftover define the curve fit; what remains is noise.
    """
    w = cs.grid.weights
    dev = cs.values - mean
    resid = dev.copy()
    for ix in cs.indices_by_subject().values():
        cbar = _project_rows(dev[ix], level1, w).mean(axis=0)
        resid[ix] -= cbar @ level1
    if level2.size:
        resid = resid - _project_rows(resid, level2, w) @ level2
    return float(np.mean(resid**2))


def fit_mfpca(
    cs: CurveSet,
    pve1: float = 0.95,
    pve2: float = 0.90,
    k1: int | None = None,
    k2: int | None = None,
) -> MfpcaModel:
    """Fit the two-level model to a hierarchical curve sample.

    Component counts are the smallest capturing ``pve1`` / ``pve2`` of each
    level's variance unless fixed via ``k1`` / ``k2``. The noise variance is
    the mean squared pointwise residual after reconstructing every training
    curve from its truncated (unshrunk) level-1 and level-2 projections.
    """
    mean = cs.values.mean(axis=0)
    pair = estimate_covariances(cs, mean)
    vals1, funcs1 = eigendecompose_operator(pair.between, cs.grid)
    vals2, funcs2 = eigendecompose_operator(pair.within, cs.grid)
    n1 = int(k1) if k1 is not None else select_n_components(vals1, pve1)
    n2 = int(k2) if k2 is not None else select_n_components(vals2, pve2)
    if not 1 <= n1 <= cs.grid.n_points or not 1 <= n2 <= cs.grid.n_points:
        raise ConfigError("component counts must lie in [1, L]")

    level1 = funcs1[:n1]
    level2 = funcs2[:n2]
    sigma_e = _truncation_residual_variance(cs, mean, level1, level2)
    total1, total2 = float(vals1.sum()), float(vals2.sum())
    model = MfpcaModel(
        grid=cs.grid,
        mean=mean,
        level1_eigenvalues=vals1[:n1],
        level1_eigenfunctions=level1,
        level2_eigenvalues=vals2[:n2],
        level2_eigenfunctions=level2,
        sigma_e=sigma_e,
        metadata={
            "fit": "mfpca",
            "selection": "fixed" if (k1 is not None or k2 is not None) else "pve",
            "pve1_target": None if k1 is not None else pve1,
            "pve2_target": None if k2 is not None else pve2,
            "pve1_achieved": float(vals1[:n1].sum() / total1) if total1 > 0 else 1.0,
            "pve2_achieved": float(vals2[:n2].sum() / total2) if total2 > 0 else 1.0,
            "n_subjects": len(cs.subjects()),
            "n_curves": cs.n_curves,
        },
    )
    model.validate()
    return model


def fit_fpca(cs: CurveSet, pve1: float = 0.95, k1: int | None = None) -> MfpcaModel:
    """Single-level special case on one curve per subject.

    The covariance is the average outer product of centered subject curves
    (denominator N). The input must already hold one curve per subject;
    average repeated curves with :func:`subject_mean_curves` first.
    """
    for subject, ix in cs.indices_by_subject().items():
        if len(ix) > 1:
            raise ConfigError(
                f"subject {subject!r} has {len(ix)} curves; average them with "
                "subject_mean_curves before fitting the single-level model"
            )
    if cs.n_curves < 2:
        raise InsufficientDataError("single-level fit needs at least 2 subjects")
    mean = cs.values.mean(axis=0)
    dev = cs.values - mean
    cov = _symmetrize(dev.T @ dev / cs.n_curves)
    vals, funcs = eigendecompose_operator(cov, cs.grid)
    n1 = int(k1) if k1 is not None else select_n_components(vals, pve1)
    if not 1 <= n1 <= cs.grid.n_points:
        raise ConfigError("component count must lie in [1, L]")
    level1 = funcs[:n1]
    scores = _project_rows(dev, level1, cs.grid.weights)
    resid = dev - scores @ level1
    total = float(vals.sum())
    model = MfpcaModel(
        grid=cs.grid,
        mean=mean,
        level1_eigenvalues=vals[:n1],
        level1_eigenfunctions=level1,
        level2_eigenvalues=np.empty(0),
        level2_eigenfunctions=np.empty((0, cs.grid.n_points)),
        sigma_e=float(np.mean(resid**2)),
        metadata={
            "fit": "fpca",
            "selection": "fixed" if k1 is not None else "pve",
            "pve1_target": None if k1 is not None else pve1,
            "pve1_achieved": float(vals[:n1].sum() / total) if total > 0 else 1.0,
            "n_subjects": cs.n_curves,
            "n_curves": cs.n_curves,
        },
    )
    model.validate()
    return model


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: MfpcaModel, path) -> None:
    """Serialize a model to versioned JSON (atomic write, lossless floats)."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "grid": {
            "points": model.grid.points.tolist(),
            "weights": model.grid.weights.tolist(),
        },
        "mean": model.mean.tolist(),
        "level1": {
            "eigenvalues": model.level1_eigenvalues.tolist(),
            "eigenfunctions": model.level1_eigenfunctions.tolist(),
        },
        "level2": {
            "eigenvalues": model.level2_eigenvalues.tolist(),
            "eigenfunctions": model.level2_eigenfunctions.tolist(),
        },
        "sigma_e": model.sigma_e,
        "metadata": model.metadata,
    }
    _atomic_write_text(path, json.dumps(doc))


def load_model(path) -> MfpcaModel:
    """Load and validate a serialized model.

    Raises :class:`ModelVersionError` on a version mismatch and
    :class:`CorruptModelError` on any schema or invariant violation.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptModelError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptModelError(f"{path}: expected a JSON object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: format version {version!r}, expected {MODEL_FORMAT_VERSION}"
        )
    required = ("grid", "mean", "level1", "level2", "sigma_e")
    for key in required:
        if key not in doc:
            raise CorruptModelError(f"{path}: missing field {key!r}")
    try:
        grid = Grid(np.asarray(doc["grid"]["points"]), np.asarray(doc["grid"]["weights"]))
        L = grid.n_points
        model = MfpcaModel(
            grid=grid,
            mean=np.asarray(doc["mean"], dtype=float),
            level1_eigenvalues=np.asarray(doc["level1"]["eigenvalues"], dtype=float),
            level1_eigenfunctions=np.asarray(
                doc["level1"]["eigenfunctions"], dtype=float
            ).reshape(-1, L) if doc["level1"]["eigenfunctions"] else np.empty((0, L)),
            level2_eigenvalues=np.asarray(doc["level2"]["eigenvalues"], dtype=float),
            level2_eigenfunctions=np.asarray(
                doc["level2"]["eigenfunctions"], dtype=float
            ).reshape(-1, L) if doc["level2"]["eigenfunctions"] else np.empty((0, L)),
            sigma_e=doc["sigma_e"],
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptModelError):
            raise
        raise CorruptModelError(f"{path}: malformed model document: {exc}") from exc
    model.validate()
    return model

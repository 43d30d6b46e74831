"""Shared fixtures: known generating models and brute-force oracles."""

from __future__ import annotations

import numpy as np
import pandas as pd

from mfpcakit import CurveSet, Grid, MfpcaModel
from mfpcakit.simgen import (
    PopulationSpec,
    orthonormalize_functions,
    synthesize_population,
    synthetic_reference_model,
)

#: the standard oracle configuration: two subject modes, two curve modes
ORACLE_LAM1 = np.array([4.0, 2.0])
ORACLE_LAM2 = np.array([1.0, 0.5])
ORACLE_SIGMA_E = 0.1


def fourier_modes(grid: Grid, n: int) -> np.ndarray:
    """First ``n`` sine/cosine modes orthonormalized under the grid quadrature."""
    t = grid.points
    seeds = []
    freq = 1
    while len(seeds) < n:
        seeds.append(np.sin(2 * np.pi * freq * t))
        if len(seeds) < n:
            seeds.append(np.cos(2 * np.pi * freq * t))
        freq += 1
    return orthonormalize_functions(np.vstack(seeds), grid)


def known_model(
    n_points: int = 128,
    lam1: np.ndarray = ORACLE_LAM1,
    lam2: np.ndarray = ORACLE_LAM2,
    sigma_e: float = ORACLE_SIGMA_E,
) -> MfpcaModel:
    """A model whose level-1 and level-2 eigenfunctions are exactly cross-orthogonal."""
    grid = Grid.uniform(n_points)
    k1, k2 = len(lam1), len(lam2)
    modes = fourier_modes(grid, k1 + k2)
    return MfpcaModel(
        grid=grid,
        mean=5.0 + 2.0 * np.sin(np.pi * grid.points),
        level1_eigenvalues=np.asarray(lam1, dtype=float),
        level1_eigenfunctions=modes[:k1],
        level2_eigenvalues=np.asarray(lam2, dtype=float),
        level2_eigenfunctions=modes[k1:],
        sigma_e=sigma_e,
    )


def sample_hierarchical(
    model: MfpcaModel,
    n_subjects: int,
    curves_per_subject: int,
    seed: int,
    occasions: int = 1,
    noise_sd: float | None = None,
) -> tuple[CurveSet, np.ndarray, np.ndarray]:
    """Draw curves from a known model with Gaussian scores and white noise.

    Returns (curves, between_scores, within_scores); between scores are shared
    across a subject's occasions, within scores and noise are per curve.
    """
    rng = np.random.default_rng(seed)
    if noise_sd is None:
        noise_sd = float(np.sqrt(model.sigma_e))
    L = model.grid.n_points
    b = rng.standard_normal((n_subjects, model.k1)) * np.sqrt(model.level1_eigenvalues)
    blocks, subjects, occs, curves, xis = [], [], [], [], []
    for i in range(n_subjects):
        n_rows = occasions * curves_per_subject
        xi = rng.standard_normal((n_rows, model.k2)) * np.sqrt(model.level2_eigenvalues)
        noise = rng.standard_normal((n_rows, L)) * noise_sd if noise_sd else 0.0
        blocks.append(
            model.mean
            + b[i] @ model.level1_eigenfunctions
            + xi @ model.level2_eigenfunctions
            + noise
        )
        xis.append(xi)
        subjects.extend([f"s{i:04d}"] * n_rows)
        for m in range(occasions):
            occs.extend([f"occ{m + 1}"] * curves_per_subject)
            curves.extend(f"c{j:03d}" for j in range(curves_per_subject))
    cs = CurveSet(
        grid=model.grid,
        subject_ids=tuple(subjects),
        occasion_ids=tuple(occs),
        curve_ids=tuple(curves),
        values=np.vstack(blocks),
    )
    return cs, b, np.vstack(xis)


GAIT_MEAN_BUMPS = ((25.0, 0.25, 0.10), (40.0, 0.72, 0.09))
GAIT_LEVEL1 = (("bump", 0.72, 0.09), ("slope", 0.72, 0.07), ("bump", 0.25, 0.10))
GAIT_LEVEL2 = (("bump", 0.5, 0.2), ("slope", 0.25, 0.06))


def gait_model():
    """Stride-like synthetic model: stance and swing peaks on 101 points."""
    return synthetic_reference_model(
        n_points=101,
        mean_bumps=GAIT_MEAN_BUMPS,
        level1_seeds=GAIT_LEVEL1,
        level1_eigenvalues=(30.0, 18.0, 8.0),
        level2_seeds=GAIT_LEVEL2,
        level2_eigenvalues=(6.0, 3.0),
        sigma_e=0.5,
    )


def planted_cohort(seed: int, n_subjects: int = 22, slope: float = 3.0, noise_sd: float = 1.0):
    """Gait-like cohort whose clinical outcome is planted on component 2.

    Returns (model, condition-A curves, condition-B curves, clinical table)
    with clinical = slope * (true component-2 between score) + noise.
    """
    model = gait_model()
    rng = np.random.default_rng(seed)
    between_a = rng.standard_normal((n_subjects, 3)) * np.sqrt(model.level1_eigenvalues)
    between_b = between_a + rng.standard_normal((n_subjects, 3)) * [0.5, 2.0, 0.5]
    curves_a = synthesize_population(
        model, between_a,
        PopulationSpec(n_subjects=n_subjects, curves_per_subject=10, occasions=1, seed=seed),
        resample_between=False,
    )
    curves_b = synthesize_population(
        model, between_b,
        PopulationSpec(n_subjects=n_subjects, curves_per_subject=10, occasions=1, seed=seed + 1),
        resample_between=False,
    )
    clinical = pd.DataFrame(
        {
            "subject_id": sorted(set(curves_a.subject_ids)),
            "updrs_a": slope * between_a[:, 1] + noise_sd * rng.standard_normal(n_subjects),
            "updrs_b": slope * between_b[:, 1] + noise_sd * rng.standard_normal(n_subjects),
        }
    )
    return model, curves_a, curves_b, clinical


def brute_force_covariances(cs: CurveSet, mean: np.ndarray):
    """Direct double-loop covariance estimators used as an independent oracle."""
    dev = cs.values - mean
    n, L = dev.shape
    total = np.zeros((L, L))
    for i in range(n):
        total += np.outer(dev[i], dev[i])
    total /= n
    between = np.zeros((L, L))
    pairs = 0
    for ix in cs.indices_by_subject().values():
        for j in ix:
            for k in ix:
                if j != k:
                    between += np.outer(dev[j], dev[k])
                    pairs += 1
    between /= pairs
    total = 0.5 * (total + total.T)
    between = 0.5 * (between + between.T)
    return total, between, total - between

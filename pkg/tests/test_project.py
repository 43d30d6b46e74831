import numpy as np
import pandas as pd
import pytest

from mfpcakit import CurveSet, Grid, fpca_project, mfpca_project, reconstruct
from mfpcakit.errors import ConfigError, GridError
from mfpcakit.mfpca import MfpcaModel
from mfpcakit.project import POOLED_TOKEN, ScoreTable, project_units

from .helpers import fourier_modes, known_model, sample_hierarchical


def repeat_curve(model, curve, n, subject="s1", occasion="o1"):
    return CurveSet(
        grid=model.grid,
        subject_ids=(subject,) * n,
        occasion_ids=(occasion,) * n,
        curve_ids=tuple(f"c{j}" for j in range(n)),
        values=np.tile(curve, (n, 1)),
    )


def single_level_model(n_points=96, k=3, lam=(3.0, 2.0, 1.0)):
    grid = Grid.uniform(n_points)
    return MfpcaModel(
        grid=grid,
        mean=2.0 + np.cos(np.pi * grid.points),
        level1_eigenvalues=np.asarray(lam[:k], dtype=float),
        level1_eigenfunctions=fourier_modes(grid, k),
        level2_eigenvalues=np.empty(0),
        level2_eigenfunctions=np.empty((0, n_points)),
        sigma_e=0.0,
    )


class TestFpcaProject:
    def test_mean_curve_scores_zero(self):
        model = single_level_model()
        assert np.max(np.abs(fpca_project(model, model.mean))) < 1e-12

    def test_unit_loading_recovered(self):
        model = single_level_model()
        curve = model.mean + 2.0 * model.level1_eigenfunctions[0]
        scores = fpca_project(model, curve)
        assert scores[0] == pytest.approx(2.0, abs=1e-9)
        assert np.max(np.abs(scores[1:])) < 1e-9

    def test_linearity(self):
        model = single_level_model()
        rng = np.random.default_rng(3)
        f, g = rng.standard_normal((2, model.grid.n_points))
        lhs = fpca_project(model, model.mean + 1.5 * f + 2.5 * g)
        rhs = 1.5 * fpca_project(model, model.mean + f) + 2.5 * fpca_project(
            model, model.mean + g
        )
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_two_level_model_rejected(self):
        model = known_model()
        with pytest.raises(ConfigError):
            fpca_project(model, model.mean)

    def test_grid_mismatch(self):
        model = single_level_model()
        with pytest.raises(GridError):
            fpca_project(model, np.zeros(7))


class TestMfpcaProject:
    def test_closed_form_shrinkage(self):
        # n identical curves at mean + phi1: raw mean projection is exactly 1
        # and the subject score is lambda / (lambda + sigma_e / n)
        model = known_model(sigma_e=0.3)
        lam = model.level1_eigenvalues[0]
        for n in (1, 4, 20):
            cs = repeat_curve(model, model.mean + model.level1_eigenfunctions[0], n)
            table, _ = mfpca_project(model, cs)
            row = table.between[table.between["component"] == 1].iloc[0]
            assert row["raw"] == pytest.approx(1.0, abs=1e-12)
            assert row["score"] == pytest.approx(lam / (lam + 0.3 / n), abs=1e-12)
            assert row["shrinkage"] == pytest.approx(lam / (lam + 0.3 / n), abs=1e-12)
            assert row["n_curves"] == n

    def test_no_shrinkage_without_noise(self):
        model = known_model(sigma_e=0.0)
        cs = repeat_curve(model, model.mean + model.level1_eigenfunctions[0], 5)
        table, dec = mfpca_project(model, cs)
        between = table.between
        assert np.allclose(between["score"], between["raw"], atol=1e-12)
        # residuals orthogonal to every subject-level eigenfunction
        proj = (dec.residual * model.grid.weights) @ model.level1_eigenfunctions.T
        assert np.max(np.abs(proj)) < 1e-9

    def test_shrinkage_monotone_in_curve_count(self):
        model = known_model(sigma_e=0.5)
        lam = model.level1_eigenvalues[0]
        factors = [lam / (lam + 0.5 / n) for n in (1, 10, 1000)]
        scores = []
        for n in (1, 10, 1000):
            cs = repeat_curve(model, model.mean + model.level1_eigenfunctions[0], n)
            table, _ = mfpca_project(model, cs)
            scores.append(float(table.between[table.between["component"] == 1]["score"].iloc[0]))
        assert scores == sorted(scores)
        assert scores == pytest.approx(factors, abs=1e-12)
        assert scores[-1] == pytest.approx(1.0, abs=1e-3)

    def test_zero_eigenvalue_scores_zero(self):
        model = known_model(lam1=np.array([4.0, 0.0]), sigma_e=0.0)
        cs = repeat_curve(model, model.mean + model.level1_eigenfunctions[1], 3)
        table, _ = mfpca_project(model, cs)
        row = table.between[table.between["component"] == 2].iloc[0]
        assert row["raw"] == pytest.approx(1.0, abs=1e-12)
        assert row["score"] == 0.0 and row["shrinkage"] == 0.0

    def test_within_scores_closed_form(self):
        model = known_model(sigma_e=0.2)
        lam2 = model.level2_eigenvalues[0]
        curve = model.mean + model.level2_eigenfunctions[0]
        cs = repeat_curve(model, curve, 1)
        table, _ = mfpca_project(model, cs)
        row = table.within[table.within["component"] == 1].iloc[0]
        # the single-curve level-1 fit removes nothing in this direction
        assert row["raw"] == pytest.approx(1.0, abs=1e-12)
        assert row["score"] == pytest.approx(lam2 / (lam2 + 0.2), abs=1e-12)

    def test_component_shift_property(self):
        model = known_model(sigma_e=0.1)
        cs, _, _ = sample_hierarchical(model, n_subjects=12, curves_per_subject=5, seed=8)
        table, _ = mfpca_project(model, cs)
        delta = 0.75
        shifted = cs.with_values(cs.values + delta * model.level1_eigenfunctions[0])
        table2, _ = mfpca_project(model, shifted)
        raw = table.between.pivot_table(index="subject_id", columns="component",
                                        values="raw", sort=False)
        raw2 = table2.between.pivot_table(index="subject_id", columns="component",
                                          values="raw", sort=False)
        assert np.allclose(raw2[1], raw[1] + delta, atol=1e-9)
        assert np.allclose(raw2[2], raw[2], atol=1e-9)

    def test_training_scores_track_generating_scores(self):
        model = known_model()
        cs, b, _ = sample_hierarchical(model, n_subjects=200, curves_per_subject=20, seed=0)
        proj = project_units(model, cs)
        for k in range(model.k1):
            corr = np.corrcoef(proj.between[:, k], b[:, k])[0, 1]
            assert abs(corr) >= 0.99

    def test_score_variances_follow_spectrum(self):
        # component energies across subjects are nonincreasing (one adjacent
        # inversion allowed as sampling slack)
        model = known_model(lam1=np.array([4.0, 2.0, 1.0, 0.5]), lam2=np.array([1.0]))
        cs, _, _ = sample_hierarchical(model, n_subjects=500, curves_per_subject=8, seed=19)
        proj = project_units(model, cs)
        variances = proj.between.var(axis=0)
        inversions = int(np.sum(np.diff(variances) > 0))
        assert inversions <= 1

    def test_per_occasion_units(self):
        model = known_model()
        cs, _, _ = sample_hierarchical(
            model, n_subjects=6, curves_per_subject=4, seed=2, occasions=2
        )
        pooled, _ = mfpca_project(model, cs)
        split, _ = mfpca_project(model, cs, per_occasion=True)
        assert set(pooled.between["occasion_id"]) == {POOLED_TOKEN}
        assert set(split.between["occasion_id"]) == {"occ1", "occ2"}
        assert len(split.between) == 2 * len(pooled.between)
        assert (pooled.between["n_curves"] == 8).all()
        assert (split.between["n_curves"] == 4).all()

    def test_grid_mismatch(self):
        model = known_model()
        other = known_model(n_points=64)
        cs = repeat_curve(other, other.mean, 2)
        with pytest.raises(GridError):
            mfpca_project(model, cs)


class TestReconstruct:
    def test_zero_scores_give_mean(self):
        model = known_model()
        between = pd.DataFrame(
            {
                "subject_id": ["s1", "s1"],
                "occasion_id": [POOLED_TOKEN] * 2,
                "component": [1, 2],
                "raw": [0.0, 0.0],
                "score": [0.0, 0.0],
                "shrinkage": [1.0, 1.0],
                "n_curves": [1, 1],
            }
        )
        table = ScoreTable(between=between, within=between.iloc[:0].assign(curve_id=""))
        out = reconstruct(model, table)
        assert out.n_curves == 1
        assert np.allclose(out.values[0], model.mean, atol=1e-12)

    def test_round_trip_on_noiseless_data(self):
        model = known_model(sigma_e=0.0)
        cs, _, _ = sample_hierarchical(
            model, n_subjects=15, curves_per_subject=4, seed=6, noise_sd=0.0
        )
        table, _ = mfpca_project(model, cs)
        out = reconstruct(model, table)
        assert out.n_curves == cs.n_curves
        signal = np.sum((cs.values - model.mean) ** 2)
        err = np.sum((out.values - cs.values) ** 2)
        assert err / signal <= 1e-6

    def test_level1_only_equals_subject_fit(self):
        model = known_model()
        cs, _, _ = sample_hierarchical(model, n_subjects=5, curves_per_subject=3, seed=7)
        table, dec = mfpca_project(model, cs)
        level1_only = ScoreTable(between=table.between, within=table.within.iloc[:0])
        out = reconstruct(model, level1_only)
        assert out.n_curves == 5
        for i, subject in enumerate(out.subject_ids):
            ix = [j for j, s in enumerate(cs.subject_ids) if s == subject][0]
            assert np.allclose(out.values[i], model.mean + dec.level1_fit[ix], atol=1e-12)

    def test_empty_table_rejected(self):
        from mfpcakit.errors import InsufficientDataError
        from mfpcakit.project import BETWEEN_COLUMNS, WITHIN_COLUMNS

        model = known_model()
        table = ScoreTable(
            between=pd.DataFrame({c: [] for c in BETWEEN_COLUMNS}),
            within=pd.DataFrame({c: [] for c in WITHIN_COLUMNS}),
        )
        with pytest.raises(InsufficientDataError):
            reconstruct(model, table)

    def test_unknown_component_rejected(self):
        model = known_model()
        between = pd.DataFrame(
            {
                "subject_id": ["s1"],
                "occasion_id": [POOLED_TOKEN],
                "component": [9],
                "raw": [1.0],
                "score": [1.0],
                "shrinkage": [1.0],
                "n_curves": [1],
            }
        )
        table = ScoreTable(between=between, within=between.iloc[:0].assign(curve_id=""))
        with pytest.raises(GridError):
            reconstruct(model, table)

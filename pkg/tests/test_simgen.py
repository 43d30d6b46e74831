import math

import numpy as np
import pytest

from mfpcakit import (
    CurveSet,
    Grid,
    apply_scenario,
    empirical_score_moments,
    gaussian_bump,
    synthesize_population,
    synthetic_reference_model,
)
from mfpcakit.errors import ConfigError, InsufficientDataError, OrthonormalizationError
from mfpcakit.mfpca import MfpcaModel
from mfpcakit.project import project_units
from mfpcakit.simgen import Bump, PopulationSpec, ScenarioSpec, orthonormalize_functions

from .helpers import known_model


class TestGaussianBump:
    def test_center_value(self):
        assert gaussian_bump(0.3, 2.5, 0.3, 0.07) == pytest.approx(2.5)

    def test_one_width_away(self):
        value = gaussian_bump(0.4 + 0.1, 1.0, 0.4, 0.1)
        assert value == pytest.approx(math.exp(-0.5), abs=1e-15)

    def test_nonpositive_width(self):
        with pytest.raises(ConfigError):
            gaussian_bump(0.5, 1.0, 0.5, 0.0)

    def test_standard_flattened_t_constants(self):
        spec = ScenarioSpec.standard("flattened_t")
        bump = spec.bumps[0]
        assert (bump.amplitude, bump.center, bump.width) == (0.5, 0.508, 0.1)
        assert spec.mode == "multiplicative"


class TestScoreMoments:
    def test_identical_vectors(self):
        scores = np.tile([1.0, -2.0], (6, 1))
        mean, cov = empirical_score_moments(scores)
        assert np.allclose(mean, [1.0, -2.0])
        assert np.allclose(cov, 0.0)

    def test_two_point_variance(self):
        mean, cov = empirical_score_moments(np.array([[-1.0], [1.0]]))
        assert mean[0] == 0.0
        assert cov[0, 0] == pytest.approx(2.0)  # n - 1 denominator

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(33)
        scores = rng.standard_normal((5000, 2)) * np.sqrt([1.0, 0.5])
        mean, cov = empirical_score_moments(scores)
        assert np.max(np.abs(mean)) < 0.05
        assert np.max(np.abs(cov - np.diag([1.0, 0.5]))) < 0.05

    def test_too_few_vectors(self):
        with pytest.raises(InsufficientDataError):
            empirical_score_moments(np.ones((2, 3)))


class TestSynthesizePopulation:
    def test_same_seed_bit_identical(self):
        model = known_model()
        between = np.random.default_rng(1).standard_normal((10, 2))
        spec = PopulationSpec(n_subjects=8, curves_per_subject=3, occasions=2, seed=99)
        a = synthesize_population(model, between, spec)
        b = synthesize_population(model, between, spec)
        assert a.values.tobytes() == b.values.tobytes()
        assert a.subject_ids == b.subject_ids

    def test_degenerate_within_covariance(self):
        model = known_model()
        between = np.array([[1.0, -0.5]])
        spec = PopulationSpec(n_subjects=4, curves_per_subject=3, occasions=2, seed=5)
        out = synthesize_population(
            model, between, spec, within_cov=np.zeros((2, 2))
        )
        # single bootstrap row and zero within spread: all curves identical
        assert np.all(out.values == out.values[0])

    def test_population_size(self):
        model = known_model()
        between = np.random.default_rng(0).standard_normal((59, 2))
        spec = PopulationSpec(n_subjects=59, curves_per_subject=4, occasions=2, seed=1)
        out = synthesize_population(model, between, spec)
        assert len(set(out.subject_ids)) == 59
        assert out.n_curves == 59 * 2 * 4
        assert set(out.occasion_ids) == {"occ1", "occ2"}

    def test_between_scores_shared_across_occasions(self):
        # subject-level projections from the two occasions must track each
        # other closely on an unperturbed population
        model = synthetic_reference_model()
        rng = np.random.default_rng(12)
        between = rng.standard_normal((59, model.k1)) * np.sqrt(model.level1_eigenvalues)
        spec = PopulationSpec(n_subjects=200, curves_per_subject=20, occasions=2, seed=77)
        out = synthesize_population(model, between, spec)
        proj = project_units(model, out, per_occasion=True)
        occ = np.array([k[1] for k in proj.unit_keys])
        s1 = proj.between[occ == "occ1"]
        s2 = proj.between[occ == "occ2"]
        for k in range(model.k1):
            corr = np.corrcoef(s1[:, k], s2[:, k])[0, 1]
            assert corr >= 0.9

    def test_curve_count_range(self):
        model = known_model()
        between = np.zeros((1, 2))
        spec = PopulationSpec(n_subjects=20, curves_per_subject=(2, 6), occasions=1, seed=3)
        out = synthesize_population(model, between, spec)
        sizes = {s: 0 for s in out.subjects()}
        for s in out.subject_ids:
            sizes[s] += 1
        assert min(sizes.values()) >= 2 and max(sizes.values()) <= 6
        assert len(set(sizes.values())) > 1

    def test_wrong_between_width(self):
        model = known_model()
        with pytest.raises(InsufficientDataError):
            synthesize_population(
                model, np.zeros((3, 5)), PopulationSpec(n_subjects=2, seed=0)
            )

    def test_single_level_model_population(self):
        # a reference without curve-level components yields constant repeats
        model = known_model()
        single = MfpcaModel(
            grid=model.grid,
            mean=model.mean,
            level1_eigenvalues=model.level1_eigenvalues,
            level1_eigenfunctions=model.level1_eigenfunctions,
            level2_eigenvalues=np.empty(0),
            level2_eigenfunctions=np.empty((0, model.grid.n_points)),
            sigma_e=0.0,
        )
        between = np.array([[1.0, 2.0], [-1.0, 0.5]])
        out = synthesize_population(
            single, between,
            PopulationSpec(n_subjects=3, curves_per_subject=4, occasions=2, seed=6),
        )
        assert out.n_curves == 3 * 2 * 4
        for ix in out.indices_by_subject().values():
            assert np.all(out.values[ix] == out.values[ix[0]])


def flat_set(n_points=251, value=10.0):
    grid = Grid.uniform(n_points)
    values = np.full((4, n_points), value)
    values += np.linspace(0, 1, n_points)  # keep curves non-constant
    return CurveSet(
        grid=grid,
        subject_ids=("s1", "s1", "s2", "s2"),
        occasion_ids=("occ1", "occ2", "occ1", "occ2"),
        curve_ids=("c1", "c1", "c1", "c1"),
        values=values,
    )


class TestApplyScenario:
    def test_no_change_identity(self):
        cs = flat_set()
        out = apply_scenario(cs, ScenarioSpec.standard("no_change"))
        assert out.values.tobytes() == cs.values.tobytes()

    def test_flattened_t_halves_center(self):
        cs = flat_set(n_points=251)  # grid contains t = 0.508 = 127/250 exactly
        out = apply_scenario(cs, ScenarioSpec.standard("flattened_t"))
        idx = 127
        assert cs.grid.points[idx] == pytest.approx(0.508, abs=1e-15)
        assert np.allclose(out.values[:, idx], 0.5 * cs.values[:, idx], atol=1e-12)

    def test_all_flattened_closed_form_multiplier(self):
        cs = flat_set(n_points=501)  # grid k/500 contains all three landmarks
        out = apply_scenario(cs, ScenarioSpec.standard("all_flattened"))
        idx = 125
        assert cs.grid.points[idx] == pytest.approx(0.25, abs=1e-15)
        expected = (
            (1 - 0.2 * math.exp(-0.5 * (0.146 / 0.1) ** 2))
            * (1 - 0.2)
            * (1 - 0.2 * math.exp(-0.5 * (0.258 / 0.1) ** 2))
        )
        ratio = out.values[0, idx] / cs.values[0, idx]
        assert ratio == pytest.approx(expected, abs=1e-12)

    def test_st_elevation_additive(self):
        cs = flat_set(n_points=201)
        out = apply_scenario(cs, ScenarioSpec.standard("st_elevation"))
        t = cs.grid.points
        expected = cs.values + 120.0 * np.exp(-0.5 * ((t - 0.37) / 0.05) ** 2)
        assert np.allclose(out.values, expected, atol=1e-12)

    def test_multiplicative_preserves_sign(self):
        rng = np.random.default_rng(2)
        grid = Grid.uniform(101)
        values = rng.standard_normal((6, 101))
        cs = CurveSet(
            grid=grid,
            subject_ids=tuple(f"s{i}" for i in range(6)),
            occasion_ids=("occ1",) * 6,
            curve_ids=("c1",) * 6,
            values=values,
        )
        for kind in ("flattened_t", "all_flattened"):
            out = apply_scenario(cs, ScenarioSpec.standard(kind))
            assert np.all(np.sign(out.values) == np.sign(cs.values))

    def test_changing_t_amplitudes_per_unit(self):
        grid = Grid.uniform(251)
        n_subj, n_curves = 30, 3
        subjects, occasions, curves = [], [], []
        for i in range(n_subj):
            for m in ("occ1", "occ2"):
                for j in range(n_curves):
                    subjects.append(f"s{i:02d}")
                    occasions.append(m)
                    curves.append(f"c{j}")
        values = np.full((len(subjects), 251), 10.0)
        cs = CurveSet(
            grid=grid,
            subject_ids=tuple(subjects),
            occasion_ids=tuple(occasions),
            curve_ids=tuple(curves),
            values=values,
        )
        out = apply_scenario(cs, ScenarioSpec.standard("changing_t"), seed=11)
        idx = 127
        ratios = out.values[:, idx] / 10.0
        assert set(np.round(ratios, 10)) <= {0.8, 0.3}
        # same amplitude within a (subject, occasion) unit
        for key, ix in cs.indices_by_unit(per_occasion=True).items():
            assert len(set(np.round(ratios[ix], 12))) == 1
        # both mixture values occur across subjects and the draw is seeded
        assert len(set(np.round(ratios, 10))) == 2
        again = apply_scenario(cs, ScenarioSpec.standard("changing_t"), seed=11)
        assert again.values.tobytes() == out.values.tobytes()

    def test_changing_t_subject_unit_mode(self):
        spec = ScenarioSpec.standard("changing_t", mixture_unit="subject")
        grid = Grid.uniform(251)
        subjects = tuple(f"s{i}" for i in range(10) for _ in range(2))
        occasions = ("occ1", "occ2") * 10
        values = np.full((20, 251), 5.0)
        cs = CurveSet(
            grid=grid,
            subject_ids=subjects,
            occasion_ids=occasions,
            curve_ids=("c1",) * 20,
            values=values,
        )
        out = apply_scenario(cs, spec, seed=4)
        ratios = out.values[:, 127] / 5.0
        for ix in cs.indices_by_subject().values():
            assert len(set(np.round(ratios[ix], 12))) == 1

    def test_mixture_needs_seed(self):
        with pytest.raises(ConfigError):
            apply_scenario(flat_set(), ScenarioSpec.standard("changing_t"))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioSpec.standard("banana")

    def test_spec_round_trip_via_dict(self):
        spec = ScenarioSpec.standard("changing_t", mixture_amplitudes=(0.1, 0.9),
                                     mixture_probs=(0.25, 0.75))
        back = ScenarioSpec.from_dict(spec.to_dict())
        assert back == spec


class TestSyntheticModel:
    def test_invariants_hold(self):
        model = synthetic_reference_model()
        model.validate()
        assert model.grid.n_points == 256
        assert model.k1 == 4 and model.k2 == 5

    def test_mean_peaks_at_dominant_landmark(self):
        model = synthetic_reference_model()
        assert model.grid.points[np.argmax(model.mean)] == pytest.approx(0.25, abs=1 / 255)

    def test_cumulative_pve_arithmetic(self):
        model = synthetic_reference_model(
            level1_seeds=(
                ("bump", 0.25, 0.05),
                ("bump", 0.508, 0.06),
                ("bump", 0.37, 0.05),
                ("bump", 0.104, 0.03),
            ),
            level1_eigenvalues=(4.0, 3.0, 2.0, 1.0),
        )
        fractions = np.cumsum(model.level1_eigenvalues) / model.level1_eigenvalues.sum()
        assert fractions[-1] == pytest.approx(1.0, abs=1e-12)

    def test_dependent_seeds_rejected(self):
        grid = Grid.uniform(32)
        f = np.sin(grid.points)
        with pytest.raises(OrthonormalizationError):
            orthonormalize_functions(np.vstack([f, 2 * f]), grid)

    def test_spectrum_must_decay(self):
        with pytest.raises(ConfigError):
            synthetic_reference_model(level1_eigenvalues=(1.0, 2.0, 3.0, 4.0))

    def test_bump_validation(self):
        with pytest.raises(ConfigError):
            Bump(1.0, 1.5, 0.1)
        with pytest.raises(ConfigError):
            Bump(1.0, 0.5, -0.1)

import math

import numpy as np
import pytest

from conftest import make_dataset
from slopesim.datagen import generate_dataset
from slopesim.datatypes import (
    Design,
    LmmFit,
    Method,
    ScenarioConfig,
    SlopeEntry,
    SlopeSet,
    Spacing,
)
from slopesim.exceptions import (
    InflationInfeasibleError,
    InsufficientDataError,
    ParameterError,
    RankDeficiencyError,
)
from slopesim.lmm import fit_lmm
from slopesim.twostage import (
    bias_corrected_slopes,
    blup_slopes,
    inflated_slopes,
    ols_slopes,
    second_stage_regress,
    simple_slopes,
)


def _toy_fit(random_effects, omega_hat, mean_slope=-4.0, n_obs=None):
    """Hand-assembled stage-one fit for transform tests."""
    if n_obs is None:
        n_obs = {sid: 3 for sid in random_effects}
    return LmmFit(
        design=Design.SLOPE_ONLY,
        coef=np.array([40.0, mean_slope]),
        coef_se=np.array([1.0, 0.1]),
        coef_names=("intercept", "time"),
        omega_hat=np.asarray(omega_hat, dtype=float),
        sigma_hat=5.0,
        random_effects=random_effects,
        n_obs=n_obs,
        converged=True,
        reml_value=0.0,
        n_iter=100,
    )


def test_simple_slope_is_endpoint_difference_quotient():
    ds = make_dataset([(1, 14.0, (0.0, 2.0), (90.0, 80.0)),
                       (2, 15.0, (0.0, 2.0, 10.0), (100.0, 95.0, 85.0))])
    slopes = simple_slopes(ds)
    assert slopes.method is Method.SIMPLE
    assert slopes.entries[1].slope == -5.0
    assert slopes.entries[2].slope == -1.5


def test_simple_slope_single_observation_is_ineligible():
    ds = make_dataset([(1, 14.0, (0.0,), (90.0,)),
                       (2, 15.0, (0.0, 2.0), (100.0, 95.0))])
    slopes = simple_slopes(ds)
    assert not slopes.entries[1].eligible
    assert math.isnan(slopes.entries[1].slope)
    assert slopes.eligible_ids() == [2]


def test_ols_slope_on_exact_line():
    ds = make_dataset([(1, 14.0, (0.0, 1.0, 2.0), (1.0, 3.0, 5.0))])
    assert ols_slopes(ds).entries[1].slope == pytest.approx(2.0, abs=1e-12)


def test_ols_slope_hand_value():
    ds = make_dataset([(1, 14.0, (0.0, 1.0, 2.0, 3.0), (0.0, 1.0, 1.0, 2.0))])
    assert ols_slopes(ds).entries[1].slope == pytest.approx(0.6, abs=1e-12)


def test_ols_equals_simple_with_two_visits():
    cfg = ScenarioConfig(n_subjects=40, nominal_times=(0.0, 2.0), master_seed=8)
    ds = generate_dataset(cfg, 1)
    a = simple_slopes(ds)
    b = ols_slopes(ds)
    for sid in a.entries:
        assert a.entries[sid].slope == pytest.approx(b.entries[sid].slope, abs=1e-12)


def test_ols_differs_from_simple_with_six_visits():
    ds = generate_dataset(ScenarioConfig(n_subjects=20, master_seed=8), 1)
    a = simple_slopes(ds)
    b = ols_slopes(ds)
    assert any(
        abs(a.entries[sid].slope - b.entries[sid].slope) > 1e-6 for sid in a.entries
    )


def test_blup_slopes_require_slope_only_fit():
    ds = generate_dataset(ScenarioConfig(n_subjects=15, master_seed=3), 1)
    fit = fit_lmm(ds, Design.FULL)
    with pytest.raises(ParameterError):
        blup_slopes(fit)


def test_blup_slopes_systematics():
    cfg = ScenarioConfig(n_subjects=40, mcar_rate=0.5, master_seed=3)
    ds = generate_dataset(cfg, 4)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    slopes = blup_slopes(fit)
    empty = [rec.subject_id for rec in ds.subjects if rec.n_obs == 0]
    assert empty
    for sid in empty:
        assert not slopes.entries[sid].eligible
    eligible = slopes.eligible_ids()
    assert set(eligible) == {rec.subject_id for rec in ds.subjects if rec.n_obs >= 1}
    # GLS orthogonality makes the predictions sum to zero exactly when the
    # fixed and random designs share their columns.
    u = np.array([fit.random_effects[sid] for sid in eligible])
    assert np.abs(u.sum(axis=0)).max() < 1e-8


def test_blup_slopes_are_shrunk_relative_to_ols():
    ds = generate_dataset(ScenarioConfig(n_subjects=60, master_seed=14), 1)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    blup = [e.slope for e in blup_slopes(fit).entries.values()]
    ols = [e.slope for e in ols_slopes(ds).entries.values()]
    assert np.var(blup) < np.var(ols)


def test_inflation_identity_when_covariances_match():
    u = {1: (1.4, 0.5), 2: (-1.4, -0.5), 3: (0.6, -0.9), 4: (-0.6, 0.9)}
    mat = np.array(list(u.values()))
    s = (mat.T @ mat) / 4
    fit = _toy_fit(u, s)
    slopes, transform = inflated_slopes(fit)
    np.testing.assert_allclose(transform.transform, np.eye(2), atol=1e-12)
    for sid, (_, u1) in u.items():
        assert slopes.entries[sid].slope == pytest.approx(-4.0 + u1, abs=1e-12)


def test_inflation_diagonal_example():
    r = math.sqrt(2.0)
    u = {1: (r, 0.0), 2: (-r, 0.0), 3: (0.0, r), 4: (0.0, -r)}
    fit = _toy_fit(u, [[4.0, 0.0], [0.0, 9.0]])
    slopes, transform = inflated_slopes(fit)
    np.testing.assert_allclose(transform.empirical_cov, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(transform.transform, [[2.0, 0.0], [0.0, 3.0]], atol=1e-12)
    assert slopes.entries[3].slope == pytest.approx(-4.0 + 3.0 * r, abs=1e-12)
    assert slopes.entries[4].slope == pytest.approx(-4.0 - 3.0 * r, abs=1e-12)


@pytest.mark.parametrize("mcar", [0.0, 0.5])
def test_inflation_contract_on_fitted_data(mcar):
    cfg = ScenarioConfig(n_subjects=60, mcar_rate=mcar, master_seed=23)
    ds = generate_dataset(cfg, 2)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    slopes, transform = inflated_slopes(fit)
    ids = [sid for sid, n in fit.n_obs.items() if n >= 1]
    u_star = np.array(
        [fit.random_effects[sid] for sid in ids]
    ) @ transform.transform
    achieved = (u_star.T @ u_star) / len(ids)
    np.testing.assert_allclose(achieved, fit.omega_hat, atol=1e-8)
    # The transform is triangular by construction.
    assert transform.transform[1, 0] == 0.0
    assert set(slopes.eligible_ids()) == set(ids)


def test_inflation_rejects_singular_empirical_covariance():
    u = {1: (1.0, 2.0), 2: (-1.0, -2.0), 3: (0.5, 1.0), 4: (-0.5, -1.0)}
    fit = _toy_fit(u, [[4.0, 0.0], [0.0, 9.0]])
    with pytest.raises(InflationInfeasibleError):
        inflated_slopes(fit)


def test_inflation_rejects_singular_target_covariance():
    u = {1: (1.4, 0.5), 2: (-1.4, -0.5), 3: (0.6, -0.9), 4: (-0.6, 0.9)}
    fit = _toy_fit(u, [[4.0, 6.0], [6.0, 9.0]])
    with pytest.raises(InflationInfeasibleError):
        inflated_slopes(fit)


def test_inflation_needs_two_subjects():
    fit = _toy_fit({1: (1.0, 1.0)}, np.eye(2))
    with pytest.raises(InsufficientDataError):
        inflated_slopes(fit)


@pytest.mark.parametrize("spacing", [Spacing.REGULAR, Spacing.IRREGULAR])
def test_correction_roundtrip_on_complete_data(spacing):
    cfg = ScenarioConfig(n_subjects=30, spacing=spacing, master_seed=19)
    ds = generate_dataset(cfg, 1)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    slopes, state = bias_corrected_slopes(ds, fit)
    assert state.feasible
    assert state.condition_estimate < 1e12
    assert slopes is not None
    u_hat = np.array([fit.random_effects[sid] for sid in state.ids]).reshape(-1)
    roundtrip = state.matrix @ state.corrected.reshape(-1)
    scale = np.abs(u_hat).max()
    np.testing.assert_allclose(roundtrip, u_hat, rtol=0, atol=1e-8 * max(scale, 1.0))


def test_correction_matches_per_subject_ols_association_on_complete_data():
    # Inverting the shrinkage operator recovers exactly the association the
    # per-subject least-squares slopes carry; only a common shift (which
    # the second stage cannot see) stays unresolved.
    cfg = ScenarioConfig(n_subjects=30, master_seed=19)
    ds = generate_dataset(cfg, 1)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    corrected, state = bias_corrected_slopes(ds, fit)
    assert state.feasible
    a = second_stage_regress(corrected, ds)
    b = second_stage_regress(ols_slopes(ds), ds)
    assert a.alpha1 == pytest.approx(b.alpha1, abs=1e-10)


def test_correction_infeasible_with_single_visit_subjects():
    cfg = ScenarioConfig(n_subjects=40, mcar_rate=0.5, master_seed=29)
    ds = generate_dataset(cfg, 2)
    assert any(rec.n_obs == 1 for rec in ds.subjects)
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    slopes, state = bias_corrected_slopes(ds, fit)
    assert slopes is None
    assert not state.feasible
    assert state.condition_estimate >= 1e12
    assert state.matrix is not None


def test_correction_requires_two_subjects():
    ds = make_dataset([(1, 14.0, (0.0, 2.0, 4.0), (90.0, 85.0, 81.0)),
                       (2, 15.0, (0.0, 2.0, 4.0), (92.0, 86.0, 80.0)),
                       (3, 13.5, (0.0, 2.0, 4.0), (88.0, 84.0, 79.0))])
    fit = fit_lmm(ds, Design.SLOPE_ONLY)
    import dataclasses

    crippled = dataclasses.replace(
        fit,
        n_obs={1: 3, 2: 0, 3: 0},
        random_effects={1: fit.random_effects[1], 2: (0.0, 0.0), 3: (0.0, 0.0)},
    )
    only_first = make_dataset([(1, 14.0, (0.0, 2.0, 4.0), (90.0, 85.0, 81.0)),
                               (2, 15.0, (), ()),
                               (3, 13.5, (), ())])
    slopes, state = bias_corrected_slopes(only_first, crippled)
    assert slopes is None
    assert not state.feasible


def test_second_stage_hand_line():
    ds = make_dataset([(1, 0.0, (0.0, 2.0), (1.0, 1.0)),
                       (2, 1.0, (0.0, 2.0), (1.0, 1.0)),
                       (3, 2.0, (0.0, 2.0), (1.0, 1.0))])
    slopes = SlopeSet(Method.SIMPLE, {1: SlopeEntry(1.0, True),
                                      2: SlopeEntry(3.0, True),
                                      3: SlopeEntry(5.0, True)})
    fit = second_stage_regress(slopes, ds)
    assert fit.alpha0 == pytest.approx(1.0, abs=1e-12)
    assert fit.alpha1 == pytest.approx(2.0, abs=1e-12)
    assert fit.n_used == 3


def test_second_stage_constant_slopes_give_zero_association():
    ds = make_dataset([(i, float(i), (0.0, 2.0), (4.0, 2.0)) for i in range(1, 5)])
    fit = second_stage_regress(simple_slopes(ds), ds)
    assert fit.alpha1 == pytest.approx(0.0, abs=1e-12)


def test_second_stage_hand_values_with_noise():
    ds = make_dataset([(1, 1.0, (0.0, 1.0), (0.0, 2.0)),
                       (2, 2.0, (0.0, 1.0), (0.0, 1.0)),
                       (3, 3.0, (0.0, 1.0), (0.0, 4.0)),
                       (4, 4.0, (0.0, 1.0), (0.0, 3.0))])
    fit = second_stage_regress(simple_slopes(ds), ds)
    assert fit.alpha1 == pytest.approx(0.6, abs=1e-12)
    assert fit.alpha0 == pytest.approx(1.0, abs=1e-12)
    assert fit.sigma_ss == pytest.approx(math.sqrt(1.6), abs=1e-12)
    assert fit.se_alpha1 == pytest.approx(math.sqrt(1.6 / 5.0), abs=1e-12)


def test_second_stage_needs_three_eligible():
    ds = make_dataset([(1, 1.0, (0.0, 1.0), (0.0, 2.0)),
                       (2, 2.0, (0.0, 1.0), (0.0, 1.0)),
                       (3, 3.0, (0.0,), (0.0,))])
    with pytest.raises(InsufficientDataError):
        second_stage_regress(simple_slopes(ds), ds)


def test_second_stage_constant_predictor_is_rank_deficient():
    ds = make_dataset([(i, 7.0, (0.0, 1.0), (0.0, float(i))) for i in range(1, 6)])
    with pytest.raises(RankDeficiencyError) as exc:
        second_stage_regress(simple_slopes(ds), ds)
    assert exc.value.columns == ("predictor",)

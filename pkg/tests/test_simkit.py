import math

import numpy as np
import pytest

from slopesim.datatypes import (
    Design,
    LmmFit,
    Method,
    ScenarioConfig,
    Spacing,
)
from slopesim.exceptions import InsufficientDataError
from slopesim.simkit import (
    METHOD_ORDER,
    SWEEP_CELLS,
    SWEEP_VALUES,
    SweepParameter,
    SweepSpec,
    compute_metrics,
    lmm_association,
    run_preset,
    run_replication,
    run_scenario,
    run_sweep,
)

TRUE = 1.0
ROOT2 = math.sqrt(2.0)


def test_compute_metrics_hand_values():
    # Two estimates around truth + 3 with sample SD exactly 4.
    est = [TRUE + 3.0 + 2.0 * ROOT2, TRUE + 3.0 - 2.0 * ROOT2]
    m = compute_metrics(est, [0.5, 0.7], TRUE, n_reps_failed=5)
    assert m.bias == pytest.approx(3.0, abs=1e-12)
    assert m.rel_bias_pct == pytest.approx(300.0, abs=1e-9)
    assert m.sd == pytest.approx(4.0, abs=1e-12)
    assert m.se == pytest.approx(0.6, abs=1e-12)
    assert m.root_mse == pytest.approx(5.0, abs=1e-12)
    assert m.n_reps_used == 2
    assert m.n_reps_failed == 5


def test_compute_metrics_quadrature():
    est = [TRUE + 0.004 + 0.212 / ROOT2, TRUE + 0.004 - 0.212 / ROOT2]
    m = compute_metrics(est, [0.2, 0.2], TRUE)
    assert m.root_mse == pytest.approx(0.2120377, abs=1e-7)
    assert m.root_mse == math.hypot(m.bias, m.sd)


def test_compute_metrics_needs_two_estimates():
    with pytest.raises(InsufficientDataError):
        compute_metrics([0.2], [0.1], TRUE)


def test_rel_bias_is_nan_when_truth_is_zero():
    m = compute_metrics([0.1, 0.3], [0.1, 0.1], 0.0)
    assert m.bias == pytest.approx(0.2, abs=1e-12)
    assert math.isnan(m.rel_bias_pct)


def test_lmm_association_reads_interaction_column():
    fit = LmmFit(
        design=Design.FULL,
        coef=np.array([1.0, 2.0, 3.0, 4.0]),
        coef_se=np.array([0.1, 0.2, 0.3, 0.4]),
        coef_names=("intercept", "predictor", "time", "predictor_time"),
        omega_hat=np.eye(2),
        sigma_hat=1.0,
        random_effects={},
        n_obs={},
        converged=True,
        reml_value=0.0,
        n_iter=10,
    )
    assert lmm_association(fit) == (4.0, 0.4)


def test_replication_order_and_two_visit_equivalence():
    cfg = ScenarioConfig(n_subjects=20, nominal_times=(0.0, 2.0),
                         master_seed=31, n_reps=1)
    recs = run_replication(cfg, 1, methods=(Method.SIMPLE, Method.OLS))
    assert [r.method for r in recs] == [Method.SIMPLE, Method.OLS]
    assert not any(r.failed for r in recs)
    # With exactly two visits the per-subject regression is the endpoint
    # difference quotient, so the two second stages coincide.
    assert recs[0].estimate == pytest.approx(recs[1].estimate, abs=1e-12)
    assert recs[0].se == pytest.approx(recs[1].se, abs=1e-12)


def test_scenario_matches_manual_aggregation():
    cfg = ScenarioConfig(n_subjects=25, nominal_times=(0.0, 2.0, 4.0, 6.0),
                         master_seed=47, n_reps=3)
    methods = (Method.SIMPLE, Method.OLS)
    rows = run_scenario(cfg, methods)
    assert [r.method for r in rows] == list(methods)
    for row in rows:
        recs = [
            r
            for rep in range(1, cfg.n_reps + 1)
            for r in run_replication(cfg, rep, methods)
            if r.method is row.method
        ]
        expected = compute_metrics(
            [r.estimate for r in recs], [r.se for r in recs], cfg.beta3,
            method=row.method,
        )
        assert row == expected
        assert row.root_mse == math.hypot(row.bias, row.sd)
        assert row.n_reps_used == 3 and row.n_reps_failed == 0


def test_worker_count_does_not_change_output():
    cfg = ScenarioConfig(n_subjects=15, nominal_times=(0.0, 2.0, 4.0),
                         master_seed=53, n_reps=4)
    serial = run_scenario(cfg, (Method.SIMPLE,), n_workers=1)
    parallel = run_scenario(cfg, (Method.SIMPLE,), n_workers=2)
    assert serial == parallel


def test_monte_carlo_error_shrinks_with_replications():
    base = ScenarioConfig(n_subjects=30, nominal_times=(0.0, 2.0, 4.0),
                          master_seed=61, n_reps=60)
    small = run_scenario(base, (Method.SIMPLE,))[0]
    big = run_scenario(base.replace(n_reps=240), (Method.SIMPLE,))[0]
    mc_small = small.sd / math.sqrt(small.n_reps_used)
    mc_big = big.sd / math.sqrt(big.n_reps_used)
    # Quadrupling replications should halve the Monte Carlo SE, give or
    # take the sampling noise of the SD estimates themselves.
    assert 0.35 < mc_big / mc_small < 0.72


def test_sweep_single_value_matches_direct_scenario():
    base = ScenarioConfig(n_subjects=18, nominal_times=(0.0, 2.0, 4.0),
                          master_seed=71, n_reps=2)
    spec = SweepSpec(SweepParameter.SIGMA_M, (0.79,), base,
                     design_cells=((Spacing.REGULAR, 0.0),))
    rows = run_sweep(spec, (Method.SIMPLE, Method.OLS))
    assert len(rows) == 2
    direct = run_scenario(base.replace(sigma_m=0.79), (Method.SIMPLE, Method.OLS))
    for row, ref in zip(rows, direct):
        assert row.scenario_id == "sigma_m0.79-regular-mcar0"
        assert row.param_name == "sigma_m"
        assert row.param_value == 0.79
        assert row.spacing is Spacing.REGULAR and row.mcar_rate == 0.0
        for field in ("method", "bias", "rel_bias_pct", "sd", "se", "root_mse",
                      "n_reps_used", "n_reps_failed"):
            assert getattr(row.summary, field) == getattr(ref, field)


def test_sweep_grids_include_baseline_values():
    defaults = ScenarioConfig()
    for param, values in SWEEP_VALUES.items():
        assert getattr(defaults, param.field) in values
    assert len(SWEEP_CELLS) == 4


@pytest.mark.parametrize("rho", [-1.0, 1.0])
def test_perfectly_correlated_effects_still_simulate(rho):
    cfg = ScenarioConfig(n_subjects=20, nominal_times=(0.0, 2.0, 4.0),
                         rho=rho, master_seed=83, n_reps=1)
    recs = run_replication(cfg, 1, methods=(Method.SIMPLE, Method.OLS))
    assert all(not r.failed and math.isfinite(r.estimate) for r in recs)


def test_unknown_preset_lists_valid_names():
    with pytest.raises(KeyError) as exc:
        run_preset("nope", ScenarioConfig())
    msg = str(exc.value)
    assert "table1" in msg and "fig1-sigma-m" in msg


def test_table1_preset_covers_eight_cells():
    base = ScenarioConfig(n_subjects=12, nominal_times=(0.0, 2.0, 4.0),
                          master_seed=89, n_reps=2)
    rows = run_preset("table1", base, methods=(Method.SIMPLE,))
    assert len(rows) == 8
    assert len({r.scenario_id for r in rows}) == 8
    assert [(r.spacing, r.mcar_rate) for r in rows] == [
        (Spacing.REGULAR, 0.0), (Spacing.REGULAR, 0.2),
        (Spacing.REGULAR, 0.5), (Spacing.REGULAR, 0.8),
        (Spacing.IRREGULAR, 0.0), (Spacing.IRREGULAR, 0.2),
        (Spacing.IRREGULAR, 0.5), (Spacing.IRREGULAR, 0.8),
    ]
    assert all(r.param_name == "" and r.param_value is None for r in rows)


def test_method_that_always_fails_yields_nan_row():
    # A single baseline visit leaves every subject with one observation, so
    # the simple slope is never eligible and the second stage starves.
    cfg = ScenarioConfig(n_subjects=10, nominal_times=(0.0,),
                         master_seed=97, n_reps=3)
    rows = run_scenario(cfg, (Method.SIMPLE,))
    assert len(rows) == 1
    row = rows[0]
    assert row.n_reps_used == 0
    assert row.n_reps_failed == 3
    for field in ("bias", "rel_bias_pct", "sd", "se", "root_mse"):
        assert math.isnan(getattr(row, field))


def test_noiseless_scenario_recovers_truth():
    cfg = ScenarioConfig(n_subjects=20, nominal_times=(0.0, 2.0, 4.0, 6.0),
                         omega0=0.0, omega1=0.0, rho=0.0, sigma_err=0.0,
                         master_seed=777, n_reps=1)
    recs = {r.method: r for r in run_replication(cfg, 1)}
    assert set(recs) == set(METHOD_ORDER)
    for method, tol in ((Method.LMM, 1e-8), (Method.SIMPLE, 1e-12),
                        (Method.OLS, 1e-12), (Method.BLUP, 1e-4)):
        rec = recs[method]
        assert not rec.failed
        assert rec.estimate == pytest.approx(cfg.beta3, abs=tol)
    # Without noise both BLUP columns are exact linear functions of the
    # predictor, so their empirical covariance is rank one and the
    # re-inflation transform cannot exist.
    inflated = recs[Method.INFLATED]
    assert inflated.failed
    assert "singular" in inflated.reason

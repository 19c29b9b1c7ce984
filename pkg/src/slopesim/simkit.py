"""Monte Carlo harness: scenarios, replications, metrics, and presets.

One replication generates a dataset and pushes it through every requested
method; one scenario aggregates replications into per-method performance
metrics; a sweep repeats that over a grid of one varied parameter times a
set of design cells (spacing, missingness). Replications are pure functions
of (config, rep_index), so any parallel schedule produces identical output.

A method failing on a replication (non-convergence, infeasible correction,
too few eligible subjects) is a recorded outcome, not an abort: the
replication is dropped from that method's statistics only and counted in
``n_reps_failed``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial

import numpy as np

from .datagen import generate_dataset
from .datatypes import (
    Design,
    LmmFit,
    Method,
    MetricsSummary,
    ScenarioConfig,
    Spacing,
)
from .exceptions import InsufficientDataError, SlopesimError
from .lmm import fit_lmm
from .twostage import (
    bias_corrected_slopes,
    blup_slopes,
    inflated_slopes,
    ols_slopes,
    second_stage_regress,
    simple_slopes,
)

METHOD_ORDER = (
    Method.LMM,
    Method.SIMPLE,
    Method.OLS,
    Method.BLUP,
    Method.INFLATED,
    Method.BLUP_CORRECTED,
)

_BLUP_FAMILY = (Method.BLUP, Method.INFLATED, Method.BLUP_CORRECTED)


@dataclass(frozen=True)
class RepRecord:
    """Outcome of one method on one replication."""

    rep_index: int
    method: Method
    estimate: float
    se: float
    failed: bool
    reason: str = ""


def _failure(rep_index: int, method: Method, reason: str) -> RepRecord:
    return RepRecord(rep_index, method, math.nan, math.nan, True, reason)


def lmm_association(fit: LmmFit) -> tuple[float, float]:
    """Association estimate and SE read off a full-design fit."""
    j = fit.coef_names.index("predictor_time")
    return float(fit.coef[j]), float(fit.coef_se[j])


def run_replication(
    cfg: ScenarioConfig,
    rep_index: int,
    methods: tuple[Method, ...] = METHOD_ORDER,
) -> tuple[RepRecord, ...]:
    """Generate replication ``rep_index`` and apply every requested method.

    All methods see the identical dataset. The three BLUP variants share a
    single slope-only stage-one fit. Failures never propagate across
    methods; each one is captured in its own record.
    """
    ds = generate_dataset(cfg, rep_index)
    records: dict[Method, RepRecord] = {}

    if Method.LMM in methods:
        try:
            fit = fit_lmm(ds, Design.FULL)
            if not fit.converged:
                records[Method.LMM] = _failure(rep_index, Method.LMM, "did not converge")
            else:
                est, se = lmm_association(fit)
                records[Method.LMM] = RepRecord(rep_index, Method.LMM, est, se, False)
        except (SlopesimError, np.linalg.LinAlgError) as e:
            records[Method.LMM] = _failure(rep_index, Method.LMM, str(e))

    for method, slope_fn in ((Method.SIMPLE, simple_slopes), (Method.OLS, ols_slopes)):
        if method not in methods:
            continue
        try:
            ss = second_stage_regress(slope_fn(ds), ds)
            records[method] = RepRecord(rep_index, method, ss.alpha1, ss.se_alpha1, False)
        except (SlopesimError, np.linalg.LinAlgError) as e:
            records[method] = _failure(rep_index, method, str(e))

    wanted_blup = [m for m in _BLUP_FAMILY if m in methods]
    if wanted_blup:
        stage_one: LmmFit | None = None
        stage_one_error = ""
        try:
            stage_one = fit_lmm(ds, Design.SLOPE_ONLY)
            if not stage_one.converged:
                stage_one, stage_one_error = None, "stage-one fit did not converge"
        except (SlopesimError, np.linalg.LinAlgError) as e:
            stage_one_error = f"stage-one fit failed: {e}"
        for method in wanted_blup:
            if stage_one is None:
                records[method] = _failure(rep_index, method, stage_one_error)
                continue
            try:
                if method is Method.BLUP:
                    slopes = blup_slopes(stage_one)
                elif method is Method.INFLATED:
                    slopes, _ = inflated_slopes(stage_one)
                else:
                    slopes, state = bias_corrected_slopes(ds, stage_one)
                    if slopes is None:
                        records[method] = _failure(
                            rep_index, method,
                            f"correction infeasible (cond {state.condition_estimate:.3g})",
                        )
                        continue
                ss = second_stage_regress(slopes, ds)
                records[method] = RepRecord(rep_index, method, ss.alpha1, ss.se_alpha1, False)
            except (SlopesimError, np.linalg.LinAlgError) as e:
                records[method] = _failure(rep_index, method, str(e))

    return tuple(records[m] for m in METHOD_ORDER if m in records)


def compute_metrics(
    estimates: list[float],
    ses: list[float],
    true_beta3: float,
    *,
    scenario_id: str = "",
    method: Method = Method.LMM,
    n_reps_failed: int = 0,
) -> MetricsSummary:
    """Aggregate successful replications into the five summary statistics.

    bias is the mean estimate minus the truth, sd the sample SD over
    replications (denominator D-1), se the mean of the model SEs, and
    root_mse the quadrature sum of bias and sd. Failed replications must
    already be excluded; they enter only through ``n_reps_failed``.
    """
    if len(estimates) < 2:
        raise InsufficientDataError(
            f"metrics need >= 2 successful estimates, got {len(estimates)}"
        )
    est = np.asarray(estimates, dtype=float)
    bias = float(est.mean()) - true_beta3
    rel = 100.0 * bias / true_beta3 if true_beta3 != 0.0 else math.nan
    sd = float(est.std(ddof=1))
    ses_arr = np.asarray(ses, dtype=float)
    with np.errstate(all="ignore"):
        se = float(np.nanmean(ses_arr)) if np.any(np.isfinite(ses_arr)) else math.nan
    return MetricsSummary(
        scenario_id=scenario_id,
        method=method,
        bias=bias,
        rel_bias_pct=rel,
        sd=sd,
        se=se,
        root_mse=math.hypot(bias, sd),
        n_reps_used=len(estimates),
        n_reps_failed=n_reps_failed,
    )


def _all_failed_summary(
    scenario_id: str, method: Method, n_used: int, n_failed: int
) -> MetricsSummary:
    return MetricsSummary(
        scenario_id=scenario_id,
        method=method,
        bias=math.nan,
        rel_bias_pct=math.nan,
        sd=math.nan,
        se=math.nan,
        root_mse=math.nan,
        n_reps_used=n_used,
        n_reps_failed=n_failed,
    )


def run_scenario(
    cfg: ScenarioConfig,
    methods: tuple[Method, ...] = METHOD_ORDER,
    n_workers: int = 1,
    scenario_id: str = "",
) -> list[MetricsSummary]:
    """Run replications 1..n_reps and aggregate each method's records.

    ``n_workers`` only changes the schedule: records are reduced in
    replication order, so output is identical for any worker count. A
    method with fewer than two successes yields a row of NaN statistics
    with the failure count intact, never a missing row.
    """
    reps = range(1, cfg.n_reps + 1)
    work = partial(run_replication, cfg, methods=methods)
    if n_workers <= 1:
        all_records = [work(r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            all_records = list(pool.map(work, reps, chunksize=8))

    out = []
    for method in METHOD_ORDER:
        if method not in methods:
            continue
        recs = [r for batch in all_records for r in batch if r.method is method]
        good = [r for r in recs if not r.failed]
        n_failed = len(recs) - len(good)
        if len(good) < 2:
            out.append(_all_failed_summary(scenario_id, method, len(good), n_failed))
            continue
        out.append(
            compute_metrics(
                [r.estimate for r in good],
                [r.se for r in good],
                cfg.beta3,
                scenario_id=scenario_id,
                method=method,
                n_reps_failed=n_failed,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Sweeps and presets.
# ---------------------------------------------------------------------------


class SweepParameter(Enum):
    SIGMA_M = "sigma_m"
    OMEGA0 = "omega0"
    OMEGA1 = "omega1"
    SIGMA_ERR = "sigma_err"
    RHO = "rho"

    @property
    def field(self) -> str:
        return self.value


#: Swept value lists; the baseline value of each parameter is included.
SWEEP_VALUES = {
    SweepParameter.SIGMA_M: (0.79, 2.0, 7.0, 10.0, 15.0, 20.0),
    SweepParameter.OMEGA0: (0.5, 1.0, 4.0, 7.0, 9.87, 12.0, 16.0),
    SweepParameter.OMEGA1: (0.5, 1.0, 2.27, 4.0, 7.0, 10.0),
    SweepParameter.SIGMA_ERR: (0.5, 1.0, 3.0, 5.87, 8.0, 10.0, 15.0),
    SweepParameter.RHO: (-1.0, -0.75, -0.5, -0.25, 0.0, 0.159, 0.25, 0.5, 0.75, 1.0),
}

#: Design cells used by every sweep preset: spacing x (complete, MCAR 50%).
SWEEP_CELLS = (
    (Spacing.REGULAR, 0.0),
    (Spacing.REGULAR, 0.5),
    (Spacing.IRREGULAR, 0.0),
    (Spacing.IRREGULAR, 0.5),
)

#: Design cells of the headline comparison table.
TABLE1_CELLS = (
    (Spacing.REGULAR, 0.0),
    (Spacing.REGULAR, 0.2),
    (Spacing.REGULAR, 0.5),
    (Spacing.REGULAR, 0.8),
    (Spacing.IRREGULAR, 0.0),
    (Spacing.IRREGULAR, 0.2),
    (Spacing.IRREGULAR, 0.5),
    (Spacing.IRREGULAR, 0.8),
)


@dataclass(frozen=True)
class SweepSpec:
    """One varied parameter over a value grid, crossed with design cells."""

    parameter: SweepParameter
    values: tuple[float, ...]
    base: ScenarioConfig
    design_cells: tuple[tuple[Spacing, float], ...] = SWEEP_CELLS


@dataclass(frozen=True)
class MetricsRow:
    """One metrics CSV row: a scenario cell label plus one method summary."""

    scenario_id: str
    spacing: Spacing
    mcar_rate: float
    param_name: str
    param_value: float | None
    summary: MetricsSummary


def _cell_id(prefix: str, spacing: Spacing, mcar: float) -> str:
    return f"{prefix}-{spacing.value}-mcar{mcar:g}"


def run_cells(
    cfg: ScenarioConfig,
    cells: tuple[tuple[Spacing, float], ...],
    prefix: str,
    methods: tuple[Method, ...] = METHOD_ORDER,
    n_workers: int = 1,
) -> list[MetricsRow]:
    """Run one configuration over a list of (spacing, mcar) design cells."""
    rows = []
    for spacing, mcar in cells:
        cell_cfg = cfg.replace(spacing=spacing, mcar_rate=mcar)
        sid = _cell_id(prefix, spacing, mcar)
        for summary in run_scenario(cell_cfg, methods, n_workers, scenario_id=sid):
            rows.append(MetricsRow(sid, spacing, mcar, "", None, summary))
    return rows


def run_sweep(
    spec: SweepSpec,
    methods: tuple[Method, ...] = METHOD_ORDER,
    n_workers: int = 1,
) -> list[MetricsRow]:
    """Run every (value, design cell) combination of a sweep.

    All parameters other than the swept one stay at their values in
    ``spec.base``. Every combination appears in the output even when a
    method fails throughout (NaN statistics, full failure count).
    """
    name = spec.parameter.field
    rows = []
    for value in spec.values:
        value_cfg = spec.base.replace(**{name: value})
        for spacing, mcar in spec.design_cells:
            cell_cfg = value_cfg.replace(spacing=spacing, mcar_rate=mcar)
            sid = _cell_id(f"{name}{value:g}", spacing, mcar)
            for summary in run_scenario(cell_cfg, methods, n_workers, scenario_id=sid):
                rows.append(MetricsRow(sid, spacing, mcar, name, value, summary))
    return rows


#: Named run setups for the standard table and figure inputs.
PRESETS: dict[str, SweepParameter | None] = {
    "table1": None,
    "fig1-sigma-m": SweepParameter.SIGMA_M,
    "fig2-omega1": SweepParameter.OMEGA1,
    "fig3-rho": SweepParameter.RHO,
    "supp4-omega0": SweepParameter.OMEGA0,
    "supp5-sigma-err": SweepParameter.SIGMA_ERR,
}


def run_preset(
    name: str,
    base: ScenarioConfig,
    methods: tuple[Method, ...] = METHOD_ORDER,
    n_workers: int = 1,
) -> list[MetricsRow]:
    """Run a named preset starting from ``base`` (normally the defaults)."""
    if name not in PRESETS:
        valid = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; valid presets: {valid}")
    param = PRESETS[name]
    if param is None:
        return run_cells(base, TABLE1_CELLS, "table1", methods, n_workers)
    spec = SweepSpec(param, SWEEP_VALUES[param], base, SWEEP_CELLS)
    return run_sweep(spec, methods, n_workers)

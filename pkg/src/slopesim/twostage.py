"""Two-stage slope estimators and the second-stage regression.

Stage one turns each subject's series into a single slope estimate, by one
of: the endpoint difference quotient (SIMPLE), per-subject least squares
(OLS), or predictions from an unconditional mixed model (BLUP, plus its
re-inflated and bias-corrected variants). Stage two regresses those slopes
on the baseline predictor; its slope coefficient estimates the same
association the one-stage mixed model measures directly.

Shrinkage makes the raw BLUP slopes under-dispersed, which attenuates the
stage-two coefficient. The two repairs implemented here are re-inflation
(a linear map aligning the empirical covariance of the predicted effects
with the fitted covariance) and inversion of the model-implied shrinkage
operator (feasible only when that operator is well conditioned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datatypes import (
    Design,
    LmmFit,
    LongitudinalDataset,
    Method,
    SecondStageFit,
    SlopeEntry,
    SlopeSet,
)
from .exceptions import (
    InflationInfeasibleError,
    InsufficientDataError,
    ParameterError,
    RankDeficiencyError,
)
from .lmm import blup_operators, params_from_fit, sufficient_stats

_COND_LIMIT = 1e12


def simple_slopes(ds: LongitudinalDataset) -> SlopeSet:
    """Endpoint slope (last - first response) / (last - first time).

    Subjects with fewer than two observations are ineligible.
    """
    entries = {}
    for s in ds.subjects:
        if s.n_obs >= 2 and s.times[-1] > s.times[0]:
            slope = (s.responses[-1] - s.responses[0]) / (s.times[-1] - s.times[0])
            entries[s.subject_id] = SlopeEntry(float(slope), True)
        else:
            entries[s.subject_id] = SlopeEntry(math.nan, False)
    return SlopeSet(Method.SIMPLE, entries)


def ols_slopes(ds: LongitudinalDataset) -> SlopeSet:
    """Least squares slope of each subject's own series.

    Needs two observations at distinct times; with exactly two it equals
    the endpoint slope.
    """
    entries = {}
    for s in ds.subjects:
        if s.n_obs < 2:
            entries[s.subject_id] = SlopeEntry(math.nan, False)
            continue
        t = np.asarray(s.times)
        y = np.asarray(s.responses)
        tb = t.mean()
        stt = float(((t - tb) ** 2).sum())
        if stt <= 0.0:
            entries[s.subject_id] = SlopeEntry(math.nan, False)
            continue
        slope = float(((t - tb) * (y - y.mean())).sum()) / stt
        entries[s.subject_id] = SlopeEntry(slope, True)
    return SlopeSet(Method.OLS, entries)


def _require_slope_only(fit: LmmFit) -> float:
    if fit.design is not Design.SLOPE_ONLY:
        raise ParameterError(
            "stage-one fit must use the slope-only design; refit with "
            "Design.SLOPE_ONLY"
        )
    return float(fit.coef[fit.coef_names.index("time")])


def blup_slopes(fit: LmmFit) -> SlopeSet:
    """Predicted slope per subject: fixed time effect plus the BLUP deviation.

    Subjects with zero observations have no conditional prediction and are
    ineligible.
    """
    mean_slope = _require_slope_only(fit)
    entries = {}
    for sid, (_, u1) in fit.random_effects.items():
        if fit.n_obs.get(sid, 0) >= 1:
            entries[sid] = SlopeEntry(mean_slope + u1, True)
        else:
            entries[sid] = SlopeEntry(math.nan, False)
    return SlopeSet(Method.BLUP, entries)


@dataclass(frozen=True)
class InflationTransform:
    """Linear map applied on the right of the stacked predictions.

    ``transform`` is A with U* = U A, chosen so that U*'U*/I equals
    ``target_cov`` (the fitted random-effect covariance) exactly;
    ``empirical_cov`` is U'U/I before the map.
    """

    empirical_cov: np.ndarray
    target_cov: np.ndarray
    transform: np.ndarray


def inflated_slopes(fit: LmmFit) -> tuple[SlopeSet, InflationTransform]:
    """Re-inflate the BLUPs to match the fitted covariance, then read slopes.

    With S = U'U/I the empirical and R the fitted covariance, the map is
    A = (L_R L_S^-1)' built from their Cholesky factors. Raises
    InflationInfeasibleError when either matrix is numerically singular
    (condition number above 1e12 or a failed factorisation), since L_S
    cannot be inverted or the target cannot be factored in that case.
    """
    mean_slope = _require_slope_only(fit)
    ids = [sid for sid, n in fit.n_obs.items() if n >= 1 and sid in fit.random_effects]
    if len(ids) < 2:
        raise InsufficientDataError("re-inflation needs at least 2 subjects with data")
    u = np.array([fit.random_effects[sid] for sid in ids])
    s_mat = (u.T @ u) / len(ids)
    r_mat = fit.omega_hat
    for name, mat in (("empirical", s_mat), ("fitted", r_mat)):
        if not _spd_well_conditioned(mat):
            raise InflationInfeasibleError(
                f"{name} random-effect covariance is numerically singular; "
                "cannot form the re-inflation transform"
            )
    l_s = np.linalg.cholesky(s_mat)
    l_r = np.linalg.cholesky(r_mat)
    a = (l_r @ np.linalg.inv(l_s)).T
    u_star = u @ a
    entries = {sid: SlopeEntry(mean_slope + float(u_star[k, 1]), True)
               for k, sid in enumerate(ids)}
    for sid in fit.n_obs:
        if sid not in entries:
            entries[sid] = SlopeEntry(math.nan, False)
    return (
        SlopeSet(Method.INFLATED, entries),
        InflationTransform(empirical_cov=s_mat, target_cov=r_mat, transform=a),
    )


def _spd_well_conditioned(mat: np.ndarray) -> bool:
    try:
        ev = np.linalg.eigvalsh(mat)
    except np.linalg.LinAlgError:
        return False
    if ev[0] <= 0.0 or not np.all(np.isfinite(ev)):
        return False
    return ev[-1] / ev[0] < _COND_LIMIT


@dataclass(frozen=True)
class BiasCorrection:
    """Outcome of the shrinkage-operator inversion.

    ``feasible`` is False exactly when ``condition_estimate`` (the condition
    number of the stacked operator restricted to the complement of its
    structural null space; inf when not even computable) reaches 1e12.
    ``matrix`` holds the assembled 2S x 2S operator whenever it was formed
    and ``corrected`` the solved (S, 2) effects on success, with rows
    aligned to ``ids``, so callers can verify the solve end to end.
    """

    feasible: bool
    condition_estimate: float
    n_subjects: int
    matrix: np.ndarray | None = None
    ids: tuple[int, ...] = ()
    corrected: np.ndarray | None = None


def bias_corrected_slopes(
    ds: LongitudinalDataset, fit: LmmFit
) -> tuple[SlopeSet | None, BiasCorrection]:
    """Undo BLUP shrinkage by inverting the model-implied bias operator.

    The stacked predictions satisfy E[U^ | U] = B U with
    B = diag(Omega) Z'V^-1(I - X(X'V^-1X)^-1X'V^-1)Z, assembled here from
    per-subject 2x2 blocks minus a rank-2 coupling. B is singular by
    construction: shifting every subject's random effect by one common
    (intercept, slope) pair is absorbed into the fixed effects, so B always
    has that two-dimensional null space and the predictions lie exactly in
    its range. The corrected predictions are therefore the minimum-norm
    solution of B U* = U^ at the structural rank 2S-2; the unresolved
    common shift moves every corrected slope equally and cancels in the
    second-stage regression.

    Feasibility is judged on the rest of the spectrum: when the condition
    number of B restricted to the complement of the structural null space
    reaches 1e12 the solve returns (None, state) instead of slopes.
    Single-visit subjects contribute exactly rank-1 blocks whose null
    direction is specific to that subject, so sparse designs routinely and
    legitimately land there.
    """
    mean_slope = _require_slope_only(fit)
    stats = sufficient_stats(ds, Design.SLOPE_ONLY)
    ops = blup_operators(params_from_fit(fit), stats)
    s_count = len(ops.ids)
    if s_count < 2:
        return None, BiasCorrection(False, math.inf, s_count)

    # B blocks: Omega (K_i delta_ij - W_i' (X'V^-1X)^-1 W_j).
    xtvx_inv = np.linalg.inv(ops.xtvx)
    coupling = np.einsum("ipa,pq,jqb->iajb", ops.W, xtvx_inv, ops.W)
    b = -np.einsum("ab,ibjc->iajc", ops.omega, coupling)
    omega_k = np.matmul(ops.omega, ops.K)
    idx = np.arange(s_count)
    b[idx, :, idx, :] += omega_k
    b = b.reshape(2 * s_count, 2 * s_count)

    rank = 2 * s_count - 2
    ids = tuple(ops.ids)
    try:
        u_mat, sv, vt = np.linalg.svd(b)
    except np.linalg.LinAlgError:
        return None, BiasCorrection(False, math.inf, s_count, b, ids)
    with np.errstate(all="ignore"):
        cond = float(sv[0] / sv[rank - 1]) if sv[rank - 1] > 0.0 else math.inf
    if not math.isfinite(cond) or cond >= _COND_LIMIT:
        return None, BiasCorrection(False, cond, s_count, b, ids)

    u_hat = np.array([fit.random_effects[sid] for sid in ops.ids]).reshape(-1)
    u_star = (vt[:rank].T @ ((u_mat[:, :rank].T @ u_hat) / sv[:rank])).reshape(s_count, 2)
    entries = {sid: SlopeEntry(mean_slope + float(u_star[k, 1]), True)
               for k, sid in enumerate(ops.ids)}
    for sid in fit.n_obs:
        if sid not in entries:
            entries[sid] = SlopeEntry(math.nan, False)
    return (
        SlopeSet(Method.BLUP_CORRECTED, entries),
        BiasCorrection(True, cond, s_count, b, ids, u_star),
    )


def second_stage_regress(slopes: SlopeSet, ds: LongitudinalDataset) -> SecondStageFit:
    """OLS of the eligible slopes on the baseline predictor.

    The slope coefficient ``alpha1`` is the association estimate. Requires
    at least three eligible subjects so the SE has a residual degree of
    freedom to stand on.
    """
    pred = {s.subject_id: s.predictor for s in ds.subjects}
    pairs = [
        (pred[sid], e.slope)
        for sid, e in slopes.entries.items()
        if e.eligible and sid in pred
    ]
    if len(pairs) < 3:
        raise InsufficientDataError(
            f"second stage needs >= 3 eligible slopes, got {len(pairs)}"
        )
    m = np.array([p for p, _ in pairs])
    c = np.array([s for _, s in pairs])
    mb = m.mean()
    smm = float(((m - mb) ** 2).sum())
    if smm <= (float(np.abs(m).max()) ** 2 + 1.0) * len(pairs) / _COND_LIMIT:
        raise RankDeficiencyError(
            "predictor is constant across eligible subjects; the association "
            "slope is not identified",
            columns=("predictor",),
        )
    alpha1 = float(((m - mb) * (c - c.mean())).sum()) / smm
    alpha0 = float(c.mean() - alpha1 * mb)
    resid = c - alpha0 - alpha1 * m
    sigma2 = float(resid @ resid) / (len(pairs) - 2)
    se = math.sqrt(sigma2 / smm)
    sigma_ss = math.sqrt(sigma2)
    return SecondStageFit(
        alpha0=alpha0, alpha1=alpha1, se_alpha1=se, sigma_ss=sigma_ss, n_used=len(pairs)
    )

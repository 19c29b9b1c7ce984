"""Profiled REML fitting of the random intercept-and-slope model.

Model, per subject i with n_i visits at times t_ij:

    y_ij = x_ij' beta + b0_i + b1_i * t_ij + e_ij,
    (b0_i, b1_i) ~ N(0, Omega),    e_ij ~ N(0, sigma^2) iid,

so V_i = Z_i Omega Z_i' + sigma^2 I with Z_i = [1, t_ij]. The REML criterion
is minimised over the variance components only; fixed effects are profiled
out by GLS at every evaluation. Because each Z_i has exactly two columns,
all linear algebra is routed through the Woodbury identity and 2x2
determinants applied to per-subject sufficient statistics, so one criterion
evaluation costs O(subjects) small-matrix work and no N x N matrix is ever
formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .datatypes import Design, LmmFit, LongitudinalDataset
from .exceptions import InsufficientDataError, RankDeficiencyError

LOG_2PI = math.log(2.0 * math.pi)

# Relative ridge added to every V_i before factorisation.
RIDGE = 1e-10

# Domain walls for the unconstrained coordinates: SDs live in
# [1e-6, 1e6] and |rho| <= tanh(14) = 1 - 2.5e-12.
_LOG_SD_MIN = math.log(1e-6)
_LOG_SD_MAX = math.log(1e6)
_ATANH_MAX = 14.0

# Hard cap on criterion evaluations per fit, across all optimiser stages.
MAX_EVALS = 2000

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class VarianceParams:
    """Variance components in unconstrained coordinates.

    The optimiser works on (log SDs, atanh correlation); the natural scale
    is recovered with :meth:`natural`. Out-of-range coordinates are clipped
    at the walls above, which keeps the criterion finite for any real input.
    """

    log_omega0: float
    log_omega1: float
    atanh_rho: float
    log_sigma: float

    @classmethod
    def from_natural(
        cls, omega0: float, omega1: float, rho: float, sigma: float
    ) -> "VarianceParams":
        def _log(v: float) -> float:
            return math.log(min(max(v, 1e-6), 1e6))

        r = min(max(rho, -1.0), 1.0)
        r = min(max(r, math.tanh(-_ATANH_MAX)), math.tanh(_ATANH_MAX))
        return cls(_log(omega0), _log(omega1), math.atanh(r), _log(sigma))

    def natural(self) -> tuple[float, float, float, float]:
        """(omega0, omega1, rho, sigma) on the natural scale."""
        w0 = math.exp(min(max(self.log_omega0, _LOG_SD_MIN), _LOG_SD_MAX))
        w1 = math.exp(min(max(self.log_omega1, _LOG_SD_MIN), _LOG_SD_MAX))
        rho = math.tanh(min(max(self.atanh_rho, -_ATANH_MAX), _ATANH_MAX))
        sigma = math.exp(min(max(self.log_sigma, _LOG_SD_MIN), _LOG_SD_MAX))
        return w0, w1, rho, sigma

    def as_array(self) -> np.ndarray:
        return np.array([self.log_omega0, self.log_omega1, self.atanh_rho, self.log_sigma])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "VarianceParams":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class SuffStats:
    """Per-subject cross products, stacked over subjects with >= 1 visit.

    These are the only data the REML criterion touches; they are computed
    once per fit. ``zero_obs_ids`` records subjects that contributed no
    rows so downstream consumers can still account for them.
    """

    design: Design
    col_names: tuple[str, ...]
    ids: tuple[int, ...]
    n: np.ndarray        # (S,) visits per subject
    XtX: np.ndarray      # (S, p, p)
    XtZ: np.ndarray      # (S, p, 2)
    Xty: np.ndarray      # (S, p)
    ZtZ: np.ndarray      # (S, 2, 2)
    Zty: np.ndarray      # (S, 2)
    yty: np.ndarray      # (S,)
    zero_obs_ids: tuple[int, ...]

    @property
    def n_total(self) -> int:
        return int(self.n.sum())

    @property
    def p(self) -> int:
        return len(self.col_names)


def design_columns(design: Design) -> tuple[str, ...]:
    if design is Design.FULL:
        return ("intercept", "predictor", "time", "predictor_time")
    return ("intercept", "time")


def _design_matrix(design: Design, predictor: float, t: np.ndarray) -> np.ndarray:
    one = np.ones_like(t)
    if design is Design.FULL:
        return np.column_stack([one, predictor * one, t, predictor * t])
    return np.column_stack([one, t])


def sufficient_stats(ds: LongitudinalDataset, design: Design) -> SuffStats:
    """Reduce a dataset to the cross products the REML criterion needs."""
    ids, ns = [], []
    xtx, xtz, xty, ztz, zty, yty = [], [], [], [], [], []
    zero_obs = []
    for s in ds.subjects:
        if s.n_obs == 0:
            zero_obs.append(s.subject_id)
            continue
        t = np.asarray(s.times)
        y = np.asarray(s.responses)
        X = _design_matrix(design, s.predictor, t)
        Z = np.column_stack([np.ones_like(t), t])
        ids.append(s.subject_id)
        ns.append(s.n_obs)
        xtx.append(X.T @ X)
        xtz.append(X.T @ Z)
        xty.append(X.T @ y)
        ztz.append(Z.T @ Z)
        zty.append(Z.T @ y)
        yty.append(float(y @ y))
    if not ids:
        raise InsufficientDataError("dataset has no observations")
    return SuffStats(
        design=design,
        col_names=design_columns(design),
        ids=tuple(ids),
        n=np.array(ns, dtype=float),
        XtX=np.stack(xtx),
        XtZ=np.stack(xtz),
        Xty=np.stack(xty),
        ZtZ=np.stack(ztz),
        Zty=np.stack(zty),
        yty=np.array(yty),
        zero_obs_ids=tuple(zero_obs),
    )


def check_design_rank(stats: SuffStats) -> None:
    """Raise RankDeficiencyError naming redundant design columns.

    Works on the pooled Gram matrix with a greedy Gram-Schmidt sweep:
    a column is redundant when, after projecting onto the columns kept so
    far, less than 1e-12 of its squared norm remains (the same 1e12
    condition limit used everywhere else). Later columns are blamed, so a
    constant predictor reports ``predictor`` and ``predictor_time`` rather
    than the intercept.
    """
    G = stats.XtX.sum(axis=0)
    p = G.shape[0]
    kept: list[int] = []
    redundant: list[int] = []
    for j in range(p):
        gjj = G[j, j]
        if gjj <= 0.0:
            redundant.append(j)
            continue
        if kept:
            K = np.ix_(kept, kept)
            try:
                a = np.linalg.solve(G[K], G[kept, j])
            except np.linalg.LinAlgError:
                redundant.append(j)
                continue
            resid = gjj - float(G[kept, j] @ a)
        else:
            resid = gjj
        if resid <= gjj / _COND_LIMIT:
            redundant.append(j)
        else:
            kept.append(j)
    if redundant:
        names = tuple(stats.col_names[j] for j in redundant)
        raise RankDeficiencyError(
            f"design matrix is rank deficient; redundant columns: {', '.join(names)}",
            columns=names,
        )


# ---------------------------------------------------------------------------
# REML criterion and GLS solves via the Woodbury identity.
#
# With Ltilde the lower-triangular factor of Omega (closed form, valid for
# singular Omega and |rho| = 1) and Ztilde_i = Z_i Ltilde:
#
#   V_i      = s2_i I + Ztilde_i Ztilde_i'
#   V_i^-1   = s2_i^-1 (I - Ztilde_i M_i^-1 Ztilde_i'),  M_i = s2_i I2 + Ztilde_i' Ztilde_i
#   ln|V_i|  = (n_i - 2) ln s2_i + ln|M_i|
#
# where s2_i = sigma^2 + delta_i and delta_i = RIDGE * tr(V_i) / n_i.
# ---------------------------------------------------------------------------


def _omega_factor(omega0: float, omega1: float, rho: float) -> np.ndarray:
    return np.array(
        [[omega0, 0.0], [omega1 * rho, omega1 * math.sqrt(max(0.0, 1.0 - rho * rho))]]
    )


@dataclass(frozen=True)
class _Woodbury:
    """V-dependent pieces shared by the criterion, GLS, and BLUP solves."""

    omega: np.ndarray     # (2, 2)
    L: np.ndarray         # (2, 2) triangular factor actually used below
    s2: np.ndarray        # (S,)
    Minv: np.ndarray      # (S, 2, 2)
    logdet_v: float
    XtZL: np.ndarray      # (S, p, 2)  X' Ztilde
    ZtZL: np.ndarray      # (S, 2, 2)  Z' Ztilde
    ZLty: np.ndarray      # (S, 2)     Ztilde' y
    xtvx: np.ndarray      # (p, p)     sum X' V^-1 X
    xtvy: np.ndarray      # (p,)       sum X' V^-1 y
    ytvy: float           # sum y' V^-1 y


def _woodbury(params: VarianceParams, stats: SuffStats) -> _Woodbury | None:
    """Assemble all V^-1 reductions for one point in parameter space.

    Returns None when V is numerically non-PD there (the criterion then
    reports +inf and the optimiser backs away).
    """
    w0, w1, rho, sigma = params.natural()
    L = _omega_factor(w0, w1, rho)
    omega = L @ L.T
    sigma2 = sigma * sigma

    tr_zoz = np.einsum("sij,ji->s", stats.ZtZ, omega)
    s2 = sigma2 + RIDGE * (sigma2 + tr_zoz / stats.n)
    if not np.all(np.isfinite(s2)) or np.any(s2 <= 0.0):
        return None

    ZtZL = stats.ZtZ @ L
    M = np.matmul(L.T, ZtZL)
    M[:, 0, 0] += s2
    M[:, 1, 1] += s2
    det_m = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    if not np.all(np.isfinite(det_m)) or np.any(det_m <= 0.0):
        return None
    Minv = np.empty_like(M)
    Minv[:, 0, 0] = M[:, 1, 1]
    Minv[:, 1, 1] = M[:, 0, 0]
    Minv[:, 0, 1] = -M[:, 0, 1]
    Minv[:, 1, 0] = -M[:, 1, 0]
    Minv /= det_m[:, None, None]

    logdet_v = float(((stats.n - 2.0) * np.log(s2) + np.log(det_m)).sum())

    XtZL = stats.XtZ @ L
    ZLty = np.einsum("ba,sb->sa", L, stats.Zty)

    XtZLMinv = np.matmul(XtZL, Minv)
    xtvx = ((stats.XtX - np.matmul(XtZLMinv, XtZL.transpose(0, 2, 1)))
            / s2[:, None, None]).sum(axis=0)
    xtvy = ((stats.Xty - np.einsum("spa,sa->sp", XtZLMinv, ZLty))
            / s2[:, None]).sum(axis=0)
    ytvy = float(((stats.yty - np.einsum("sa,sab,sb->s", ZLty, Minv, ZLty)) / s2).sum())
    return _Woodbury(
        omega=omega, L=L, s2=s2, Minv=Minv, logdet_v=logdet_v,
        XtZL=XtZL, ZtZL=ZtZL, ZLty=ZLty, xtvx=xtvx, xtvy=xtvy, ytvy=ytvy,
    )


def _as_stats(
    data: LongitudinalDataset | SuffStats, design: Design
) -> SuffStats:
    if isinstance(data, SuffStats):
        return data
    return sufficient_stats(data, design)


def reml_objective(
    params: VarianceParams,
    data: LongitudinalDataset | SuffStats,
    design: Design = Design.FULL,
) -> float:
    """-2 times the restricted log-likelihood, profiled over fixed effects.

    ``data`` may be a dataset or precomputed sufficient statistics (the
    hot path inside the optimiser). Returns +inf wherever the implied
    covariance or the GLS normal equations are numerically singular, so
    the optimiser can treat the criterion as defined on all of R^4.
    """
    stats = _as_stats(data, design)
    wb = _woodbury(params, stats)
    if wb is None:
        return math.inf
    try:
        factor = cho_factor(wb.xtvx, lower=True)
    except (LinAlgError, ValueError):
        return math.inf
    beta = cho_solve(factor, wb.xtvy)
    logdet_xtvx = 2.0 * float(np.log(np.diag(factor[0])).sum())
    quad = wb.ytvy - float(beta @ wb.xtvy)
    n, p = stats.n_total, stats.p
    value = (n - p) * LOG_2PI + wb.logdet_v + logdet_xtvx + quad
    return value if math.isfinite(value) else math.inf


def gls_fixed_effects(
    params: VarianceParams,
    data: LongitudinalDataset | SuffStats,
    design: Design = Design.FULL,
) -> tuple[np.ndarray, np.ndarray]:
    """GLS fixed effects and their covariance at fixed variance components.

    Returns (beta, cov_beta) with cov_beta = (sum X' V^-1 X)^-1.
    """
    stats = _as_stats(data, design)
    wb = _woodbury(params, stats)
    if wb is None:
        raise LinAlgError("covariance is numerically singular at these parameters")
    factor = cho_factor(wb.xtvx, lower=True)
    beta = cho_solve(factor, wb.xtvy)
    cov = cho_solve(factor, np.eye(stats.p))
    return beta, cov


def predict_random_effects(
    params: VarianceParams, stats: SuffStats, beta: np.ndarray
) -> dict[int, tuple[float, float]]:
    """Empirical BLUPs u_i = Omega Z_i' V_i^-1 (y_i - X_i beta).

    Subjects with zero observations get (0.0, 0.0), the unconditional mean.
    """
    wb = _woodbury(params, stats)
    if wb is None:
        raise LinAlgError("covariance is numerically singular at these parameters")
    # Z'(y - X beta), then the Woodbury form of Z' V^-1 r.
    ztr = stats.Zty - np.einsum("spa,p->sa", stats.XtZ, beta)
    inner = np.einsum("ba,sb->sa", wb.L, ztr)
    ztvr = (ztr - np.einsum("sab,sbc,sc->sa", wb.ZtZL, wb.Minv, inner)) / wb.s2[:, None]
    u = np.einsum("ab,sb->sa", wb.omega, ztvr)
    out = {sid: (float(u[k, 0]), float(u[k, 1])) for k, sid in enumerate(stats.ids)}
    for sid in stats.zero_obs_ids:
        out[sid] = (0.0, 0.0)
    return out


def params_from_fit(fit: LmmFit) -> VarianceParams:
    """Recover optimiser coordinates from a fit's natural-scale estimates."""
    w0 = math.sqrt(max(fit.omega_hat[0, 0], 0.0))
    w1 = math.sqrt(max(fit.omega_hat[1, 1], 0.0))
    rho = fit.omega_hat[0, 1] / (w0 * w1) if w0 > 0.0 and w1 > 0.0 else 0.0
    return VarianceParams.from_natural(w0, w1, rho, fit.sigma_hat)


def extract_blups(fit: LmmFit, ds: LongitudinalDataset) -> dict[int, tuple[float, float]]:
    """Recompute per-subject random-effect predictions from a fit.

    Equivalent to ``fit.random_effects`` when ``ds`` is the dataset the fit
    came from; usable on non-converged fits if the caller accepts them.
    """
    stats = sufficient_stats(ds, fit.design)
    beta = np.asarray(fit.coef, dtype=float)
    return predict_random_effects(params_from_fit(fit), stats, beta)


@dataclass(frozen=True)
class BlupOperators:
    """Fitted-model operators needed by the shrinkage bias correction.

    For each subject (in ``ids`` order): K_i = Z_i' V_i^-1 Z_i and
    W_i = X_i' V_i^-1 Z_i, plus the pooled GLS information sum X' V^-1 X.
    """

    ids: tuple[int, ...]
    omega: np.ndarray   # (2, 2)
    K: np.ndarray       # (S, 2, 2)
    W: np.ndarray       # (S, p, 2)
    xtvx: np.ndarray    # (p, p)


def blup_operators(params: VarianceParams, stats: SuffStats) -> BlupOperators:
    wb = _woodbury(params, stats)
    if wb is None:
        raise LinAlgError("covariance is numerically singular at these parameters")
    # K_i = s2^-1 (Z'Z - Z'Ztilde M^-1 Ztilde'Z); W_i analogous with X'Z.
    K = (stats.ZtZ - np.matmul(np.matmul(wb.ZtZL, wb.Minv), wb.ZtZL.transpose(0, 2, 1))
         ) / wb.s2[:, None, None]
    W = (stats.XtZ - np.matmul(np.matmul(wb.XtZL, wb.Minv), wb.ZtZL.transpose(0, 2, 1))
         ) / wb.s2[:, None, None]
    return BlupOperators(ids=stats.ids, omega=wb.omega, K=K, W=W, xtvx=wb.xtvx)


# ---------------------------------------------------------------------------
# Optimisation: moment-based and dispersed starts, Nelder-Mead exploration,
# quasi-Newton polish, then a tight simplex restart that both refines and
# certifies the optimum.
# ---------------------------------------------------------------------------


class _Budget:
    """Counts criterion evaluations and remembers the best point seen."""

    def __init__(self, fn, cap: int):
        self.fn = fn
        self.cap = cap
        self.count = 0
        self.best_x: np.ndarray | None = None
        self.best_f = math.inf

    def __call__(self, x: np.ndarray) -> float:
        if self.count >= self.cap:
            raise _BudgetExhausted
        self.count += 1
        f = self.fn(x)
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float)
        return f


class _BudgetExhausted(Exception):
    pass


def _per_subject_lines(ds: LongitudinalDataset):
    """OLS line through each subject's series (needs >= 2 distinct times).

    Returns (intercepts, slopes, predictors, pooled residual variance).
    """
    a, c, m = [], [], []
    rss, df = 0.0, 0
    for s in ds.subjects:
        if s.n_obs < 2:
            continue
        t = np.asarray(s.times)
        y = np.asarray(s.responses)
        tb, yb = t.mean(), y.mean()
        stt = float(((t - tb) ** 2).sum())
        if stt <= 0.0:
            continue
        slope = float(((t - tb) * (y - yb)).sum()) / stt
        inter = yb - slope * tb
        a.append(inter)
        c.append(slope)
        m.append(s.predictor)
        if s.n_obs >= 3:
            r = y - inter - slope * t
            rss += float(r @ r)
            df += s.n_obs - 2
    sigma2 = rss / df if df > 0 else float("nan")
    return np.array(a), np.array(c), np.array(m), sigma2


def _moment_start(ds: LongitudinalDataset, design: Design) -> VarianceParams | None:
    """Method-of-moments start from per-subject least squares lines."""
    a, c, m, sigma2 = _per_subject_lines(ds)
    if a.size < 3:
        return None
    if design is Design.FULL and np.std(m) > 1e-12:
        a = a - np.polyval(np.polyfit(m, a, 1), m)
        c = c - np.polyval(np.polyfit(m, c, 1), m)
    else:
        a = a - a.mean()
        c = c - c.mean()
    cov = np.cov(np.vstack([a, c]), ddof=1)
    if not math.isfinite(sigma2) or sigma2 <= 0.0:
        sigma2 = 0.25 * float(cov[0, 0] + 1.0)
    # The raw covariance of fitted lines overstates Omega by the sampling
    # noise of each line; subtracting the average of that noise is the
    # moment correction. If it overshoots, fall back to the raw value.
    noise = np.zeros((2, 2))
    k = 0
    for s in ds.subjects:
        if s.n_obs < 2:
            continue
        t = np.asarray(s.times)
        tb = t.mean()
        stt = float(((t - tb) ** 2).sum())
        if stt <= 0.0:
            continue
        noise += sigma2 * np.array(
            [[1.0 / s.n_obs + tb * tb / stt, -tb / stt], [-tb / stt, 1.0 / stt]]
        )
        k += 1
    cov_adj = cov - noise / k
    v0 = cov_adj[0, 0] if cov_adj[0, 0] > 1e-8 else max(cov[0, 0], 1e-4)
    v1 = cov_adj[1, 1] if cov_adj[1, 1] > 1e-8 else max(cov[1, 1], 1e-4)
    w0, w1 = math.sqrt(v0), math.sqrt(v1)
    rho = min(max(cov_adj[0, 1] / (w0 * w1), -0.95), 0.95)
    return VarianceParams.from_natural(w0, w1, rho, math.sqrt(sigma2))


def _dispersed_start(ds: LongitudinalDataset) -> VarianceParams:
    """Crude wide start used alongside the moment start."""
    y = np.concatenate([s.responses for s in ds.subjects if s.n_obs > 0])
    t = np.concatenate([s.times for s in ds.subjects if s.n_obs > 0])
    sd = float(np.std(y)) or 1.0
    t_range = float(t.max() - t.min()) or 1.0
    return VarianceParams.from_natural(sd, max(sd / t_range, 0.05), 0.0, sd)


def fit_lmm(ds: LongitudinalDataset, design: Design = Design.FULL) -> LmmFit:
    """Fit the mixed model by REML and predict per-subject random effects.

    Runs Nelder-Mead from a moment-based and a dispersed start, polishes
    the winner with BFGS on numerical gradients, then certifies the result
    with a small-simplex restart: the fit is flagged ``converged`` only if
    that restart contracts to its tolerances, or moves the criterion by at
    most a relative 1e-8 and the natural-scale components by at most 1e-6.

    Raises InsufficientDataError when there are fewer observations than
    fixed effects plus one, and RankDeficiencyError when design columns are
    numerically collinear (the offending columns are named).
    """
    stats = sufficient_stats(ds, design)
    p = stats.p
    if len(stats.ids) < 2:
        raise InsufficientDataError("need at least 2 subjects with observations")
    if stats.n_total < p + 3:
        raise InsufficientDataError(
            f"need at least {p + 3} observations to fit {p} fixed effects "
            f"plus variance components, got {stats.n_total}"
        )
    check_design_rank(stats)

    # Responses that are an exact linear function of the design leave the
    # REML criterion unbounded along the variance floors, where the GLS
    # normal equations degenerate; return the pooled OLS solution with zero
    # variance components, the only sensible limit, instead of optimizing.
    gram = stats.XtX.sum(axis=0)
    xty = stats.Xty.sum(axis=0)
    yty = float(np.sum(stats.yty))
    pooled, *_ = np.linalg.lstsq(gram, xty, rcond=None)
    rss = max(yty - float(pooled @ xty), 0.0)
    if rss <= 1e-12 * max(yty, 1.0):
        params = VarianceParams.from_natural(1e-6, 1e-6, 0.0, 1e-6)
        sigma2 = rss / max(stats.n_total - p, 1)
        cov = np.linalg.inv(gram) * sigma2
        return LmmFit(
            design=design,
            coef=pooled,
            coef_se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
            coef_names=stats.col_names,
            omega_hat=np.zeros((2, 2)),
            sigma_hat=0.0,
            random_effects={s.subject_id: (0.0, 0.0) for s in ds.subjects},
            n_obs={s.subject_id: s.n_obs for s in ds.subjects},
            converged=True,
            reml_value=reml_objective(params, stats),
            n_iter=1,
        )

    budget = _Budget(lambda x: reml_objective(VarianceParams.from_array(x), stats), MAX_EVALS)
    starts = [s for s in (_moment_start(ds, design), _dispersed_start(ds)) if s is not None]

    try:
        # The criterion returns inf outside its domain; BFGS difference
        # quotients across that edge raise numpy warnings worth silencing.
        with np.errstate(invalid="ignore", over="ignore"):
            for start in starts:
                optimize.minimize(
                    budget, start.as_array(), method="Nelder-Mead",
                    options={"maxfev": 500, "xatol": 1e-4, "fatol": 1e-6},
                )
            if budget.best_x is None:
                raise InsufficientDataError("criterion was non-finite at every start")
            optimize.minimize(
                budget, budget.best_x, method="BFGS",
                options={"maxiter": 60, "gtol": 1e-7},
            )
            x_polish = budget.best_x.copy()
            f_polish = budget.best_f
            # Restart with a deliberately small simplex: from a point this
            # close to the optimum the default 5% simplex would spend the
            # whole budget re-contracting.
            simplex = np.vstack([x_polish] * 5)
            for k in range(4):
                simplex[k + 1, k] += 1e-4
            res = optimize.minimize(
                budget, x_polish, method="Nelder-Mead",
                options={"maxfev": 400, "xatol": 1e-7, "fatol": 1e-9,
                         "initial_simplex": simplex},
            )
        f_final = budget.best_f
        x_final = budget.best_x.copy()
        nat_polish = np.array(VarianceParams.from_array(x_polish).natural())
        nat_final = np.array(VarianceParams.from_array(x_final).natural())
        obj_moved = abs(f_polish - f_final) / (1.0 + abs(f_final))
        par_moved = float(np.max(np.abs(nat_polish - nat_final) / (1.0 + np.abs(nat_final))))
        converged = bool(res.success or (obj_moved <= 1e-8 and par_moved <= 1e-6))
    except _BudgetExhausted:
        if budget.best_x is None:
            raise InsufficientDataError("criterion was non-finite at every start") from None
        x_final, f_final, converged = budget.best_x.copy(), budget.best_f, False

    params = VarianceParams.from_array(x_final)
    if not math.isfinite(f_final):
        raise InsufficientDataError("REML criterion is non-finite at the optimum")
    w0, w1, rho, sigma = params.natural()
    beta, cov = gls_fixed_effects(params, stats)
    ranef = predict_random_effects(params, stats, beta)
    n_obs = {s.subject_id: s.n_obs for s in ds.subjects}
    return LmmFit(
        design=design,
        coef=beta,
        coef_se=np.sqrt(np.diag(cov)),
        coef_names=stats.col_names,
        omega_hat=_omega_factor(w0, w1, rho) @ _omega_factor(w0, w1, rho).T,
        sigma_hat=sigma,
        random_effects=ranef,
        n_obs=n_obs,
        converged=converged,
        reml_value=f_final,
        n_iter=budget.count,
    )

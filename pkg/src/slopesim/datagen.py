"""Synthetic longitudinal data generation.

Every replication is a pure function of (config, rep_index). Randomness is
split into purpose-tagged substreams so that switching one feature on or off
(irregular spacing, MCAR dropout) leaves every other draw untouched: the same
subjects get the same predictor values, random effects, and error terms
whether or not their visit times are jittered or thinned afterwards.
"""

from __future__ import annotations

import math

import numpy as np

from .datatypes import (
    LongitudinalDataset,
    Provenance,
    ScenarioConfig,
    Spacing,
    SubjectRecord,
)
from .exceptions import ParameterError

# Stable stream tags. Appending new purposes is safe; renumbering is not,
# since it would silently change every generated dataset.
_PURPOSE_CODES = {
    "predictor": 1,
    "random_effects": 2,
    "error": 3,
    "jitter": 4,
    "mcar": 5,
}

_SEED_MASK = (1 << 64) - 1


def substream(master_seed: int, rep_index: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (replication, purpose) pair."""
    if purpose not in _PURPOSE_CODES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    if rep_index < 0:
        raise ValueError(f"rep_index must be >= 0, got {rep_index}")
    key = (master_seed & _SEED_MASK, rep_index, _PURPOSE_CODES[purpose])
    return np.random.default_rng(np.random.SeedSequence(key))


def build_omega(omega0: float, omega1: float, rho: float) -> np.ndarray:
    """Random-effect covariance from its SD/correlation parameterisation.

    Singular results (a zero SD, rho = +-1) are valid outputs; only
    out-of-domain inputs are rejected.
    """
    if omega0 < 0 or omega1 < 0:
        raise ParameterError(f"SDs must be >= 0, got ({omega0}, {omega1})")
    if not -1.0 <= rho <= 1.0:
        raise ParameterError(f"rho must be in [-1, 1], got {rho}")
    cov = rho * omega0 * omega1
    return np.array([[omega0**2, cov], [cov, omega1**2]])


def draw_random_effects(
    omega0: float, omega1: float, rho: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n pairs (intercept, slope) ~ N(0, Omega).

    Uses the triangular factor directly, so degenerate cases (a zero SD,
    rho = +-1) produce exactly singular draws instead of a Cholesky failure.
    """
    z = rng.standard_normal((n, 2))
    b0 = omega0 * z[:, 0]
    b1 = omega1 * (rho * z[:, 0] + math.sqrt(max(0.0, 1.0 - rho * rho)) * z[:, 1])
    return np.column_stack([b0, b1])


# Jitter half-width for irregular spacing, in years. Must exceed half the
# nominal visit gap: adjacent visit windows then overlap, so sorted
# consecutive gaps can come arbitrarily close to zero with non-vanishing
# density. Those near-collisions are what make per-subject slopes explode
# once dropout strips a series down to two close visits.
JITTER_HALF_WIDTH = 1.5


def generate_times(cfg: ScenarioConfig, rep_index: int) -> np.ndarray:
    """Visit times for every subject, shape (n_subjects, n_visits).

    REGULAR spacing reuses the nominal grid for everyone. IRREGULAR spacing
    adds an independent U(-1.5, 1.5) year shift to every post-baseline visit;
    baseline stays pinned at 0 and each subject's times are re-sorted so
    they remain increasing even where jitter windows overlap.

    A visit whose jitter window pokes below zero (possible on custom grids
    with an early nominal time) draws from the window rescaled onto
    (0, nominal + w) instead: clipping would pile mass onto t=0 and tie
    with the pinned baseline, which no valid dataset may contain.
    """
    nominal = np.asarray(cfg.nominal_times)
    if cfg.spacing is Spacing.REGULAR:
        return np.tile(nominal, (cfg.n_subjects, 1))
    rng = substream(cfg.master_seed, rep_index, "jitter")
    w = JITTER_HALF_WIDTH
    jitter = rng.uniform(-w, w, size=(cfg.n_subjects, nominal.size))
    jitter[:, 0] = 0.0
    times = nominal + jitter
    crossing = nominal <= w
    crossing[0] = False
    if np.any(crossing):
        hi = nominal[crossing] + w
        times[:, crossing] = np.maximum(
            (jitter[:, crossing] + w) * (hi / (2.0 * w)),
            np.finfo(float).tiny,
        )
    return np.sort(times, axis=1)


def mcar_mask(cfg: ScenarioConfig, rep_index: int) -> np.ndarray:
    """Boolean keep-mask, shape (n_subjects, n_visits).

    Every observation, baseline included, is dropped independently with
    probability ``mcar_rate``. Subjects may lose all their visits; they stay
    in the dataset with empty series rather than being silently removed.
    """
    shape = (cfg.n_subjects, len(cfg.nominal_times))
    if cfg.mcar_rate == 0.0:
        return np.ones(shape, dtype=bool)
    rng = substream(cfg.master_seed, rep_index, "mcar")
    return rng.uniform(size=shape) >= cfg.mcar_rate


def generate_dataset(cfg: ScenarioConfig, rep_index: int) -> LongitudinalDataset:
    """Generate one complete replication.

    The response for subject i at time t is

        y = (beta0 + b0_i + beta1 * m_i) + (beta2 + b1_i + beta3 * m_i) * t + e,

    with (b0_i, b1_i) ~ N(0, Omega), e ~ N(0, sigma_err^2) independent over
    visits, and m_i ~ N(mu_m, sigma_m^2) the baseline predictor.
    """
    n, n_visits = cfg.n_subjects, len(cfg.nominal_times)

    m = substream(cfg.master_seed, rep_index, "predictor").normal(
        cfg.mu_m, cfg.sigma_m, size=n
    )
    b = draw_random_effects(
        cfg.omega0, cfg.omega1, cfg.rho, n, substream(cfg.master_seed, rep_index, "random_effects")
    )
    errors = substream(cfg.master_seed, rep_index, "error").normal(
        0.0, cfg.sigma_err, size=(n, n_visits)
    )
    times = generate_times(cfg, rep_index)
    keep = mcar_mask(cfg, rep_index)

    intercepts = cfg.beta0 + b[:, 0] + cfg.beta1 * m
    slopes = cfg.beta2 + b[:, 1] + cfg.beta3 * m
    responses = intercepts[:, None] + slopes[:, None] * times + errors

    subjects = []
    for i in range(n):
        ki = keep[i]
        subjects.append(
            SubjectRecord(
                subject_id=i + 1,
                predictor=float(m[i]),
                times=tuple(float(t) for t in times[i, ki]),
                responses=tuple(float(y) for y in responses[i, ki]),
                latent_intercept=float(b[i, 0]),
                latent_slope=float(b[i, 1]),
            )
        )
    return LongitudinalDataset(subjects=tuple(subjects), provenance=Provenance.GENERATED)

"""Core domain types shared by the generator, fitters, and harness.

All types are plain frozen dataclasses and are safe to share across worker
processes. Construction of subject/dataset records is permissive; structural
rules are checked explicitly by :func:`validate_dataset`, which reports
violations as data instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .exceptions import ParameterError


class Spacing(Enum):
    REGULAR = "regular"
    IRREGULAR = "irregular"


class Provenance(Enum):
    GENERATED = "generated"
    INGESTED = "ingested"


class Design(Enum):
    """Fixed-effect design of the mixed model.

    FULL: intercept, predictor, time, predictor x time (association model).
    SLOPE_ONLY: intercept and time only (first stage of the BLUP methods).
    """

    FULL = "full"
    SLOPE_ONLY = "slope_only"


class Method(Enum):
    LMM = "lmm"
    SIMPLE = "simple"
    OLS = "ols"
    BLUP = "blup"
    INFLATED = "inflated"
    BLUP_CORRECTED = "blup_corrected"


#: Methods that produce per-subject slopes (everything except the one-stage LMM).
SLOPE_METHODS = (
    Method.SIMPLE,
    Method.OLS,
    Method.BLUP,
    Method.INFLATED,
    Method.BLUP_CORRECTED,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """All data-generating parameters of one simulation scenario.

    Defaults are the baseline scenario: 200 subjects measured biennially over
    ten years, with fixed effects and variance components estimated from a
    real renal cohort. ``beta3`` is the true predictor-slope association that
    every estimator targets.
    """

    n_subjects: int = 200
    nominal_times: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    spacing: Spacing = Spacing.REGULAR
    mcar_rate: float = 0.0
    beta0: float = -24.22
    beta1: float = 4.34
    beta2: float = -5.13
    beta3: float = 0.223
    mu_m: float = 14.8
    sigma_m: float = 0.79
    omega0: float = 9.87
    omega1: float = 2.27
    rho: float = 0.159
    sigma_err: float = 5.87
    n_reps: int = 1000
    master_seed: int = 20240901

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ParameterError(f"n_subjects must be positive, got {self.n_subjects}")
        if self.n_reps < 1:
            raise ParameterError(f"n_reps must be positive, got {self.n_reps}")
        times = tuple(float(t) for t in self.nominal_times)
        object.__setattr__(self, "nominal_times", times)
        if len(times) == 0 or times[0] != 0.0:
            raise ParameterError("nominal_times must start at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError(f"nominal_times must be strictly increasing, got {times}")
        if any(t < 0 for t in times):
            raise ParameterError("nominal_times must be nonnegative")
        if not 0.0 <= self.mcar_rate <= 1.0:
            raise ParameterError(f"mcar_rate must be in [0, 1], got {self.mcar_rate}")
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must be in [-1, 1], got {self.rho}")
        for name in ("sigma_m", "omega0", "omega1", "sigma_err"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: baseline predictor value plus a time/response series.

    ``latent_intercept``/``latent_slope`` hold the true random effects on
    generated data; they exist for diagnostics only and are never read by
    any estimator.
    """

    subject_id: int
    predictor: float
    times: tuple[float, ...]
    responses: tuple[float, ...]
    latent_intercept: float | None = None
    latent_slope: float | None = None

    @property
    def n_obs(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class LongitudinalDataset:
    subjects: tuple[SubjectRecord, ...]
    provenance: Provenance = Provenance.INGESTED

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def subject(self, subject_id: int) -> SubjectRecord:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


@dataclass(frozen=True)
class Violation:
    """One breach of a dataset invariant; ``subject_id`` is None for
    dataset-level rules."""

    subject_id: int | None
    rule: str


def validate_dataset(ds: LongitudinalDataset) -> list[Violation]:
    """Check every dataset invariant, returning one record per breach.

    An empty list means the dataset is well formed. Violations are data,
    not failures: malformed inputs are reported, never raised.
    """
    violations = []
    seen_ids = set()
    any_two_obs = False
    for s in ds.subjects:
        if s.subject_id in seen_ids:
            violations.append(Violation(s.subject_id, "duplicate subject_id"))
        seen_ids.add(s.subject_id)
        if len(s.times) != len(s.responses):
            violations.append(Violation(s.subject_id, "times and responses differ in length"))
        if any(b <= a for a, b in zip(s.times, s.times[1:])):
            violations.append(Violation(s.subject_id, "times not strictly increasing"))
        if not math.isfinite(s.predictor):
            violations.append(Violation(s.subject_id, "predictor not finite"))
        if s.n_obs >= 2:
            any_two_obs = True
    if not any_two_obs:
        violations.append(Violation(None, "no subject with >=2 observations"))
    return violations


@dataclass(frozen=True)
class SlopeEntry:
    slope: float
    eligible: bool


@dataclass(frozen=True)
class SlopeSet:
    """Per-subject slope estimates for one method.

    ``eligible`` is False exactly when the method could not produce a slope
    for that subject (fewer than 2 observations for SIMPLE/OLS, zero
    observations for the BLUP family); the slope is NaN in that case.
    """

    method: Method
    entries: dict[int, SlopeEntry]

    def eligible_ids(self) -> list[int]:
        return [sid for sid, e in self.entries.items() if e.eligible]


@dataclass(frozen=True)
class SecondStageFit:
    """OLS of per-subject slopes on the baseline predictor."""

    alpha0: float
    alpha1: float
    se_alpha1: float
    sigma_ss: float
    n_used: int


@dataclass(frozen=True)
class LmmFit:
    """A fitted linear mixed model: REML variance components, GLS fixed
    effects, and per-subject random-effect predictions.

    ``coef``/``coef_se`` are ordered per ``coef_names``. ``random_effects``
    maps each subject with at least one observation to its predicted
    (intercept, slope) deviation; subjects with zero observations appear
    with (0.0, 0.0) and an ``n_obs`` count of 0.
    """

    design: Design
    coef: np.ndarray
    coef_se: np.ndarray
    coef_names: tuple[str, ...]
    omega_hat: np.ndarray
    sigma_hat: float
    random_effects: dict[int, tuple[float, float]]
    n_obs: dict[int, int]
    converged: bool
    reml_value: float
    n_iter: int


@dataclass(frozen=True)
class MetricsSummary:
    """Monte Carlo performance of one method in one scenario cell."""

    scenario_id: str
    method: Method
    bias: float
    rel_bias_pct: float
    sd: float
    se: float
    root_mse: float
    n_reps_used: int
    n_reps_failed: int

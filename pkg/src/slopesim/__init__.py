"""Slope estimation for longitudinal predictor-progression studies.

A one-stage linear mixed model and five two-stage competitors (endpoint
slopes, per-subject least squares, BLUPs, re-inflated BLUPs, shrinkage
corrected BLUPs), plus a deterministic Monte Carlo harness that measures
their bias, variance, and root MSE across data-generating scenarios.
"""

__version__ = "0.1.0"

from .datagen import build_omega, generate_dataset, substream
from .datatypes import (
    Design,
    LmmFit,
    LongitudinalDataset,
    Method,
    MetricsSummary,
    Provenance,
    ScenarioConfig,
    SecondStageFit,
    SlopeEntry,
    SlopeSet,
    Spacing,
    SubjectRecord,
    Violation,
    validate_dataset,
)
from .exceptions import (
    InflationInfeasibleError,
    InsufficientDataError,
    ParameterError,
    RankDeficiencyError,
    SchemaError,
    SlopesimError,
)
from .lmm import (
    VarianceParams,
    extract_blups,
    fit_lmm,
    gls_fixed_effects,
    reml_objective,
    sufficient_stats,
)
from .simkit import (
    METHOD_ORDER,
    PRESETS,
    MetricsRow,
    SweepParameter,
    SweepSpec,
    compute_metrics,
    run_preset,
    run_replication,
    run_scenario,
    run_sweep,
)
from .twostage import (
    BiasCorrection,
    InflationTransform,
    bias_corrected_slopes,
    blup_slopes,
    inflated_slopes,
    ols_slopes,
    second_stage_regress,
    simple_slopes,
)

__all__ = [
    "__version__",
    "BiasCorrection",
    "Design",
    "InflationInfeasibleError",
    "InflationTransform",
    "InsufficientDataError",
    "LmmFit",
    "LongitudinalDataset",
    "METHOD_ORDER",
    "Method",
    "MetricsRow",
    "MetricsSummary",
    "ParameterError",
    "PRESETS",
    "Provenance",
    "RankDeficiencyError",
    "ScenarioConfig",
    "SchemaError",
    "SecondStageFit",
    "SlopeEntry",
    "SlopeSet",
    "SlopesimError",
    "Spacing",
    "SubjectRecord",
    "SweepParameter",
    "SweepSpec",
    "VarianceParams",
    "Violation",
    "bias_corrected_slopes",
    "blup_slopes",
    "build_omega",
    "compute_metrics",
    "extract_blups",
    "fit_lmm",
    "generate_dataset",
    "gls_fixed_effects",
    "inflated_slopes",
    "ols_slopes",
    "reml_objective",
    "run_preset",
    "run_replication",
    "run_scenario",
    "run_sweep",
    "second_stage_regress",
    "simple_slopes",
    "substream",
    "sufficient_stats",
    "validate_dataset",
]

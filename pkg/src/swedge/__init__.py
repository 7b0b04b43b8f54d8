"""Power analysis for stepped wedge trials with two treatments.

Closed-form standard errors and Wald power for treatment, interaction,
and contrast effects under cross-sectional, cohort, and nested
exchangeable covariance models, verified against a dense GLS oracle.
"""

from .covariance import (
    CompoundSymmetry,
    CorrelationSpec,
    CovarianceModel,
    ParameterError,
    RawComponents,
    SingularCovarianceError,
    StandardizedParams,
    cluster_cov_entries,
    raw_cov_entries,
    standardize,
    unstandardize,
)
from .designs import (
    Condition,
    DesignError,
    DesignGrid,
    FixedEffectsMatrix,
    TransitionPolicy,
    TransitionViolation,
    TransitionViolationError,
    UnknownDesignError,
    build_design_matrix,
    catalog_design,
    catalog_ids,
    concurrent_design,
    generate_standard_swd,
    parse_design,
    require_valid,
    serialize_design,
    validate_design,
)
from .power import (
    DEFAULT_RHO_GRID,
    ContrastSpec,
    EffectPower,
    EffectSpec,
    PowerResult,
    SweepRow,
    design_power,
    sweep,
    wald_power,
)
from .variance import (
    EFFECT_LABELS,
    RankDeficiencyError,
    TreatmentCovariance,
    active_effects,
    closed_form_covariance,
    contrast_variance,
    information_matrix,
    oracle_covariance,
    precision_terms,
    sherman_morrison_entries,
)

__version__ = "0.1.0"

__all__ = [
    "CompoundSymmetry",
    "Condition",
    "ContrastSpec",
    "CorrelationSpec",
    "CovarianceModel",
    "DEFAULT_RHO_GRID",
    "DesignError",
    "DesignGrid",
    "EFFECT_LABELS",
    "EffectPower",
    "EffectSpec",
    "FixedEffectsMatrix",
    "ParameterError",
    "PowerResult",
    "RankDeficiencyError",
    "RawComponents",
    "SingularCovarianceError",
    "StandardizedParams",
    "SweepRow",
    "TransitionPolicy",
    "TransitionViolation",
    "TransitionViolationError",
    "TreatmentCovariance",
    "UnknownDesignError",
    "active_effects",
    "build_design_matrix",
    "catalog_design",
    "catalog_ids",
    "closed_form_covariance",
    "cluster_cov_entries",
    "concurrent_design",
    "contrast_variance",
    "design_power",
    "generate_standard_swd",
    "information_matrix",
    "oracle_covariance",
    "parse_design",
    "precision_terms",
    "raw_cov_entries",
    "require_valid",
    "serialize_design",
    "sherman_morrison_entries",
    "standardize",
    "sweep",
    "unstandardize",
    "validate_design",
    "wald_power",
    "__version__",
]

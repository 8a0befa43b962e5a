"""Fused species distribution modeling for distance-sampling and
capture-recapture surveys: point process simulation, five competing
likelihood fits, uncertainty quantification, and a replication harness."""

__version__ = "0.1.0"

from .covariates import CovariateField, GPConfig, evaluate, ingest_raster, simulate_grf
from .errors import ConfigError, DataError
from .estimation import (
    FitResult,
    FitSettings,
    abundance,
    delta_method_ci,
    fit,
    nelder_mead,
    numerical_hessian,
    wald_ci,
)
from .experiment import (
    StudyConfig,
    StudyReport,
    build_study_design,
    coverage,
    emit_reports,
    relative_efficiency,
    run_study,
    true_abundance,
)
from .geometry import (
    ObservedLocationSupport,
    PartitionGrid,
    QuadratureRule,
    SampledRegion,
    StudyRegion,
    SurveyDesign,
    SurveyUnit,
    area_rule,
    build_partitions,
    check_nonoverlap,
    distance_to_unit,
    line_rule,
    load_design,
    save_design,
)
from .likelihoods import (
    LikelihoodSpec,
    QuadratureSettings,
    WorkingParams,
    loglik,
    loglik_aggregated_cos,
    loglik_aggregated_farr,
    loglik_complete,
    loglik_fused_distance,
    loglik_fused_region,
    loglik_terms,
)
from .pointprocess import (
    IndividualPattern,
    ModelParams,
    ObservationSet,
    aggregate_counts,
    degrade_to_partial,
    intensity,
    load_observations,
    save_observations,
    simulate_ippp,
    simulate_observation,
)

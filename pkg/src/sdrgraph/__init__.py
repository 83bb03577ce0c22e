"""Joint sufficient dimension reduction and structured Gaussian modelling."""

from .errors import ConstructionError, DegenerateModelError, NumericalFailure
from .model import (
    ComplexitySummary,
    JointPrecision,
    RegConfig,
    StructuredParams,
    Variant,
    assemble,
    conditional_loglik,
    count_parameters,
    fm_factor_report,
    principal_angles,
    sample_covariance,
    sdr_map,
    split_adjoint,
)
from .solver import FitResult, KKTReport, SolverOptions, fit, kkt_residuals, objective

from .synth import PopulationMetadata, PopulationModel, PopulationSpec, describe, make_population, sample
from .harness import (
    REFERENCE_SPEC,
    ExperimentSummary,
    ScaledLambda,
    TrialOutcome,
    predictive_loglik,
    reference_rule,
    run_experiment,
    run_trial,
    select_by_complexity,
    structural_match,
)
from .diagnostics import (
    SubspaceProduct,
    chi_min_gain,
    diagnose_population,
    eta_quantities,
    phi_norm,
    polyhedral_set_V,
    theorem_constants,
    varphi_irrepresentability,
)

__version__ = "0.1.0"

__all__ = [
    "ComplexitySummary",
    "ConstructionError",
    "DegenerateModelError",
    "ExperimentSummary",
    "FitResult",
    "JointPrecision",
    "KKTReport",
    "NumericalFailure",
    "PopulationMetadata",
    "PopulationModel",
    "PopulationSpec",
    "REFERENCE_SPEC",
    "RegConfig",
    "ScaledLambda",
    "SolverOptions",
    "StructuredParams",
    "SubspaceProduct",
    "TrialOutcome",
    "Variant",
    "assemble",
    "chi_min_gain",
    "conditional_loglik",
    "count_parameters",
    "describe",
    "diagnose_population",
    "eta_quantities",
    "fit",
    "fm_factor_report",
    "kkt_residuals",
    "make_population",
    "objective",
    "phi_norm",
    "polyhedral_set_V",
    "predictive_loglik",
    "principal_angles",
    "reference_rule",
    "run_experiment",
    "run_trial",
    "sample",
    "sample_covariance",
    "sdr_map",
    "select_by_complexity",
    "split_adjoint",
    "structural_match",
    "theorem_constants",
    "varphi_irrepresentability",
]

"""Causal-effect estimation for treatment-assignment algorithms with
multiple versions of treatment: standardization, inverse probability
weighting and targeted maximum likelihood, plus a simulation lab and a
xenograft-screen emulation pipeline."""

from .core import (
    ArmSpec,
    CohortTable,
    CovariateSpec,
    DataError,
    DecisionRule,
    EstimationError,
    PMAlgorithm,
    PositivityReport,
    SchemaError,
    StudySpec,
    UnitRecord,
    VersionDistribution,
    eligibility,
    load_study,
    parse_study,
    positivity_check,
    read_cohort_csv,
    restrict_eligible,
    write_cohort_csv,
)
from .estimators import (
    ESTIMANDS,
    METHODS,
    EffectEstimate,
    EstimandSpec,
    MeanEstimate,
    MethodSpec,
    RegimeTarget,
    estimate_effect,
    estimate_report,
    report_to_json,
)
from .modeling import ModelConfig
from .simulation import (
    ExperimentResult,
    ObservedAssignment,
    Scenario,
    VersionEquation,
    assign_observed,
    default_estimands,
    default_method_specs,
    generate_superpopulation,
    load_scenario,
    mae,
    main_scenario,
    parse_scenario,
    result_to_json,
    run_experiment,
    sample_cohorts,
    scenario_to_json,
    uniform_assignment_scenario,
)

__version__ = "0.1.0"

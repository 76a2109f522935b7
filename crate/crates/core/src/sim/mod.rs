//! Monte Carlo engine for the simulation design: two covariates with time-varying
//! effects, exponential dropout, administrative censoring, missing-at-random
//! covariates, and performance summaries with Monte Carlo standard errors.

mod calibrate;
mod generate;
mod missing;
mod study;

pub use calibrate::{calibrate_rates, outcome_fractions, Calibration, CalibrationTarget, Probe, RateKind, PILOT_SUBJECTS};
pub use generate::{
    generate_covariates, generate_event_time, scenario_tve, true_effect, BINARY_PREVALENCE, CONTINUOUS_CORRELATION,
    MAX_PANEL, N_SCENARIOS, QUADRATURE_TOLERANCE, SECOND_EFFECT,
};
pub use missing::{apply_missingness, Missingness};
pub use study::{
    aggregate, run_rep, run_replication_study, simulate_cohort, CohortStats, CovariatePerformance, Method, MethodFailure,
    MethodPerformance, MethodResult, PerformanceReport, PointPerformance, RepOutcome, ScenarioConfig, SimulatedCohort,
    EVALUATION_TIMES,
};

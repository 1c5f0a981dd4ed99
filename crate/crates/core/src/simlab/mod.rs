//! Monte Carlo laboratory: cohort generation, two-phase sampling, replicate
//! fits and summaries.

pub mod config;
pub mod diagnostic;
pub mod generate;
pub mod representation;
pub mod study;

pub use config::{
    reference_scenario, reference_scenario_estimated, AuxGen, Baseline, Censoring, CensoringDist,
    CovariateGen, SamplingSpec, ScenarioConfig, StrataRule,
};
pub use diagnostic::{expansion_diagnostic, taylor_terms, DiagnosticReport, TaylorInputs};
pub use generate::{draw_subject, generate_by_strata, generate_cohort, Subject};
pub use representation::{representation_check, RepresentationReport};
pub use study::{
    child_seed, replicate_rng, replicate_sample, run_replicate, run_study, run_study_with,
    summarize, EstimatorSummary, Execution, ReplicateResult, StudyOutput, StudySummary,
};

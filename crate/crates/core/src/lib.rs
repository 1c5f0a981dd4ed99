pub mod design;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod simlab;
pub mod survival;
pub mod variance;

pub use design::{
    compute_weights, draw_phase_two, fit_logistic_alpha, DesignMode, LogisticFormula,
    PhaseOneRecord, PhaseTwoTarget, SamplingDesign, WeightFit,
};
pub use error::{IterationRecord, Result, WlError};
pub use estimator::{fit_wl_cox, refit_hazard, CoxFit, SolverOptions};
pub use survival::{
    breslow_hazard, compute_risk_sums, efficient_score_contributions, log_partial_likelihood,
    partial_information, partial_score, CohortData, RiskSetSums, StepHazard,
};
pub use variance::{
    var_bernoulli_known, var_model_based, var_residual_regression, var_stratified_closed_form,
    variance_report, LeadingTerm, VarianceReport,
};

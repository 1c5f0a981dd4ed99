//! Fit report written by `wlcox fit`. See `docs/report-schema.md`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wlcox_core::design::{DesignMode, SamplingDesign, StratumCount, WeightFit};
use wlcox_core::variance::{standard_errors, VarianceReport};
use wlcox_core::{CoxFit, IterationRecord};

/// Bumped in the major component whenever a field is removed or changes meaning.
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub name: String,
    pub label: String,
    pub covariance: Vec<Vec<f64>>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardReport {
    pub times: Vec<f64>,
    pub jumps: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub stratum: u32,
    pub n_total: usize,
    pub n_sampled: usize,
    pub always_sampled: bool,
    pub sampling_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub values: Vec<f64>,
    /// Stratum of each component for stratified designs, empty otherwise.
    pub strata: Vec<u32>,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: String,
    pub status: String,
    pub design: SamplingDesign,
    pub n_phase1: usize,
    pub n_phase2: usize,
    pub n_events_phase2: usize,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    /// Estimator behind `se` and `z`.
    pub primary_variance: String,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub variance: Vec<VarianceEntry>,
    /// Uncentered R² of each dfbeta column on the α-influence columns.
    pub residual_r2: Vec<f64>,
    pub hazard: HazardReport,
    pub strata: Vec<StratumRow>,
    pub alpha: AlphaReport,
    pub convergence: Convergence,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Estimators reported for each design mode.
pub fn estimators_for(mode: DesignMode) -> &'static [&'static str] {
    match mode {
        DesignMode::BernoulliKnown => &["model_based", "bernoulli_known", "residual_regression"],
        DesignMode::FinitePopulation | DesignMode::EstimatedStratified => &[
            "model_based",
            "residual_regression",
            "estimated_plugin",
            "stratified_variance",
            "stratified_second_moment",
        ],
        DesignMode::EstimatedLogistic => {
            &["model_based", "residual_regression", "estimated_plugin"]
        }
    }
}

fn primary_for(mode: DesignMode) -> &'static str {
    match mode {
        DesignMode::BernoulliKnown => "bernoulli_known",
        _ => "residual_regression",
    }
}

fn stratum_row(c: &StratumCount) -> StratumRow {
    StratumRow {
        stratum: c.stratum,
        n_total: c.n_total,
        n_sampled: c.n_sampled,
        always_sampled: c.always_sampled,
        sampling_fraction: c.n_sampled as f64 / c.n_total as f64,
    }
}

pub fn build_report(
    design: &SamplingDesign,
    covariates: Vec<String>,
    status: &[bool],
    weights: &WeightFit,
    fit: &CoxFit,
    var: &VarianceReport,
) -> FitReport {
    let wanted = estimators_for(design.mode);
    let variance: Vec<VarianceEntry> = var
        .estimators
        .iter()
        .filter(|e| wanted.contains(&e.name))
        .map(|e| VarianceEntry {
            name: e.name.to_string(),
            label: e.label.to_string(),
            covariance: rows(&e.covariance),
            se: standard_errors(&e.covariance),
        })
        .collect();
    let primary = primary_for(design.mode);
    let se = variance
        .iter()
        .find(|v| v.name == primary)
        .map(|v| v.se.clone())
        .unwrap_or_default();
    let beta: Vec<f64> = fit.beta_hat.iter().copied().collect();
    let z = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let n_events_phase2 = status
        .iter()
        .zip(&weights.sampled)
        .filter(|(d, s)| **d && **s)
        .count();
    FitReport {
        schema_version: SCHEMA_VERSION.to_string(),
        status: "ok".into(),
        design: design.clone(),
        n_phase1: fit.n_phase1,
        n_phase2: weights.sampled.iter().filter(|s| **s).count(),
        n_events_phase2,
        covariates,
        beta,
        primary_variance: primary.into(),
        se,
        z,
        variance,
        residual_r2: var.residual_diagnostics.clone(),
        hazard: HazardReport {
            times: fit.hazard.jump_times.clone(),
            jumps: fit.hazard.jumps.clone(),
            cumulative: fit.hazard.cumulative_at_jumps(),
        },
        strata: weights.stratum_counts.iter().map(stratum_row).collect(),
        alpha: AlphaReport {
            values: weights.alpha.clone(),
            strata: weights.alpha_strata.clone(),
            trace: weights.trace.clone(),
        },
        convergence: Convergence {
            converged: fit.converged,
            iterations: fit.iterations.clone(),
        },
    }
}

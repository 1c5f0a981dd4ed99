//! First-order expansion of the estimated-weights IPW average around the
//! true sampling model:
//!
//! `√N (P^π̂ − P^π₀) ℓ̃ ≈ −[(1/N) Σ_{V₀ᶜ} ℓ̃ π̇₀ᵀ / π₀] √N (α̂ − α₀)`.
//!
//! `ℓ̃` is taken from the full-cohort fit and held fixed, so only the weights
//! differ between the two sides.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{SamplingSpec, ScenarioConfig};
use super::generate::generate_cohort;
use super::study::{map_indexed, replicate_rng, Execution};
use crate::design::{self, compute_weights, draw_phase_two, DesignMode, PhaseOneRecord, WeightFit};
use crate::error::{Result, WlError};
use crate::estimator::{fit_wl_cox, SolverOptions};

/// Inputs for one evaluation of both sides; rows indexed by subject.
pub struct TaylorInputs<'a> {
    pub influence: &'a DMatrix<f64>,
    pub sampled: &'a [bool],
    pub in_v0c: &'a [bool],
    pub pi_hat: &'a [f64],
    pub pi0: &'a [f64],
    /// `N × q` rows of `∂π/∂α` at `α₀`.
    pub pi_dot0: &'a DMatrix<f64>,
    pub alpha_hat: &'a [f64],
    pub alpha0: &'a [f64],
}

/// `(lhs, rhs)` of the expansion.
pub fn taylor_terms(t: &TaylorInputs<'_>) -> (DVector<f64>, DVector<f64>) {
    let n = t.influence.nrows();
    let p = t.influence.ncols();
    let q = t.alpha0.len();
    let root_n = (n as f64).sqrt();
    let mut lhs = DVector::zeros(p);
    let mut m = DMatrix::zeros(p, q);
    for i in (0..n).filter(|&i| t.in_v0c[i]) {
        let row = t.influence.row(i).transpose();
        if t.sampled[i] {
            lhs += &row * (1.0 / t.pi_hat[i] - 1.0 / t.pi0[i]);
        }
        if q > 0 {
            m += &row * t.pi_dot0.row(i) / t.pi0[i];
        }
    }
    lhs /= root_n;
    m /= n as f64;
    let shift = DVector::from_iterator(
        q,
        t.alpha_hat
            .iter()
            .zip(t.alpha0)
            .map(|(a, b)| root_n * (a - b)),
    );
    let rhs = -(m * shift);
    (lhs, rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub n_subjects: usize,
    pub replicates: usize,
    /// Replicates where generation, weighting or the cohort fit failed.
    pub failures: usize,
    /// `sqrt(mean ‖lhs‖²)` over successful replicates.
    pub rms_lhs: f64,
    /// `sqrt(mean ‖lhs − rhs‖²)`.
    pub rms_difference: f64,
    /// `rms_difference / rms_lhs`, zero when both sides vanish.
    pub ratio: f64,
}

/// True `π₀`, `π̇₀` and `α₀` aligned with the fitted α components.
fn truth(
    config: &ScenarioConfig,
    records: &[PhaseOneRecord],
    w: &WeightFit,
) -> Result<(Vec<f64>, DMatrix<f64>, Vec<f64>)> {
    let n = records.len();
    let q = w.q();
    match (&config.design.mode, &config.sampling) {
        (
            DesignMode::EstimatedStratified,
            SamplingSpec::Bernoulli { probs } | SamplingSpec::FixedFraction { probs },
        ) => {
            let alpha0: Vec<f64> = w.alpha_strata.iter().map(|j| probs[j]).collect();
            let mut pi0 = vec![1.0; n];
            let mut pi_dot = DMatrix::zeros(n, q);
            for (i, r) in records.iter().enumerate() {
                if let Some(k) = w.alpha_strata.iter().position(|&j| j == r.stratum) {
                    pi0[i] = alpha0[k];
                    pi_dot[(i, k)] = 1.0;
                }
            }
            Ok((pi0, pi_dot, alpha0))
        }
        (DesignMode::EstimatedLogistic, SamplingSpec::Logistic { alpha }) => {
            let formula = config
                .design
                .logistic_formula
                .as_ref()
                .ok_or_else(|| WlError::config("design.logistic_formula", "required"))?;
            let mut pi0 = vec![1.0; n];
            let mut pi_dot = DMatrix::zeros(n, q);
            for (i, r) in records.iter().enumerate() {
                if !w.in_v0c[i] {
                    continue;
                }
                let x = design::logistic_row(r, formula)?;
                let eta: f64 = x.iter().zip(alpha).map(|(a, b)| a * b).sum();
                let pi = 1.0 / (1.0 + (-eta).exp());
                pi0[i] = pi;
                for (k, xk) in x.iter().enumerate() {
                    pi_dot[(i, k)] = pi * (1.0 - pi) * xk;
                }
            }
            Ok((pi0, pi_dot, alpha.clone()))
        }
        _ => Err(WlError::config(
            "design.mode",
            "the expansion diagnostic needs estimated weights with a matching sampling model",
        )),
    }
}

fn diagnostic_replicate(config: &ScenarioConfig, r: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut rng = replicate_rng(config.master_seed, r as u64);
    let (mut records, full) = generate_cohort(config, &mut rng)?;
    let mut totals = std::collections::BTreeMap::new();
    for rec in &records {
        *totals.entry(rec.stratum).or_insert(0usize) += 1;
    }
    let target = config.phase_two_target(&totals);
    draw_phase_two(&mut records, &config.design, &target, &mut rng)?;
    let w = compute_weights(&records, &config.design)?;
    let cohort_fit = fit_wl_cox(&full, &SolverOptions::default())?;
    let (pi0, pi_dot0, alpha0) = truth(config, &records, &w)?;
    Ok(taylor_terms(&TaylorInputs {
        influence: &cohort_fit.influence,
        sampled: &w.sampled,
        in_v0c: &w.in_v0c,
        pi_hat: &w.pi,
        pi0: &pi0,
        pi_dot0: &pi_dot0,
        alpha_hat: &w.alpha,
        alpha0: &alpha0,
    }))
}

pub fn expansion_diagnostic(config: &ScenarioConfig, exec: Execution) -> Result<DiagnosticReport> {
    config.validate()?;
    if !config.design.is_estimated() {
        return Err(WlError::config(
            "design.mode",
            "the expansion diagnostic needs an estimated-weights design",
        ));
    }
    let terms = map_indexed(config.replicates, exec, |r| diagnostic_replicate(config, r))?;
    let mut failures = 0;
    let mut ss_lhs = 0.0;
    let mut ss_diff = 0.0;
    let mut used = 0usize;
    for t in terms {
        match t {
            Ok((lhs, rhs)) => {
                ss_lhs += lhs.norm_squared();
                ss_diff += (&lhs - &rhs).norm_squared();
                used += 1;
            }
            // configuration problems are not per-replicate noise
            Err(e @ WlError::Config { .. }) => return Err(e),
            Err(_) => failures += 1,
        }
    }
    if used == 0 {
        return Err(WlError::InvalidInput(
            "every diagnostic replicate failed".into(),
        ));
    }
    let rms_lhs = (ss_lhs / used as f64).sqrt();
    let rms_difference = (ss_diff / used as f64).sqrt();
    let ratio = if rms_lhs > 0.0 {
        rms_difference / rms_lhs
    } else if rms_difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DiagnosticReport {
        n_subjects: config.n_subjects,
        replicates: config.replicates,
        failures,
        rms_lhs,
        rms_difference,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::config::{reference_scenario, reference_scenario_estimated};

    #[test]
    fn true_alpha_gives_zero_on_both_sides() {
        let infl = DMatrix::from_row_slice(4, 1, &[0.3, -1.0, 2.0, 0.5]);
        let pi = [0.4, 0.4, 1.0, 0.7];
        let pi_dot = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let (lhs, rhs) = taylor_terms(&TaylorInputs {
            influence: &infl,
            sampled: &[true, false, true, true],
            in_v0c: &[true, true, false, true],
            pi_hat: &pi,
            pi0: &pi,
            pi_dot0: &pi_dot,
            alpha_hat: &[0.4, 0.7],
            alpha0: &[0.4, 0.7],
        });
        assert_eq!(lhs[0], 0.0);
        assert_eq!(rhs[0], 0.0);
    }

    #[test]
    fn stratified_terms_match_hand_computation() {
        // one stratum, α̂ = 0.5 vs α₀ = 0.4, N = 4, two sampled
        let infl = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let (lhs, rhs) = taylor_terms(&TaylorInputs {
            influence: &infl,
            sampled: &[true, true, false, false],
            in_v0c: &[true; 4],
            pi_hat: &[0.5; 4],
            pi0: &[0.4; 4],
            pi_dot0: &DMatrix::from_element(4, 1, 1.0),
            alpha_hat: &[0.5],
            alpha0: &[0.4],
        });
        assert!((lhs[0] - 3.0 * (2.0 - 2.5) / 2.0).abs() < 1e-14);
        assert!((rhs[0] + 10.0 / 4.0 / 0.4 * 2.0 * 0.1).abs() < 1e-14);
    }

    #[test]
    fn fully_sampled_design_is_identically_zero() {
        let mut c = reference_scenario_estimated();
        c.n_subjects = 200;
        c.replicates = 4;
        c.design.always_sampled_strata = vec![0, 1, 2, 3];
        let rep = expansion_diagnostic(&c, Execution::Sequential).unwrap();
        assert_eq!(rep.rms_lhs, 0.0);
        assert_eq!(rep.rms_difference, 0.0);
        assert_eq!(rep.ratio, 0.0);
    }

    #[test]
    fn known_weight_design_is_rejected() {
        let c = reference_scenario();
        assert!(matches!(
            expansion_diagnostic(&c, Execution::Sequential),
            Err(WlError::Config { .. })
        ));
    }
}

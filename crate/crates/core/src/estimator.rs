//! Weighted-likelihood Cox fit: Newton iteration on the IPW partial score with
//! the baseline hazard profiled out through the IPW Breslow estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{IterationRecord, Result, WlError};
use crate::linalg;
use crate::survival::{self, CohortData, StepHazard, Sweep};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm tolerance on the partial score.
    pub score_tol: f64,
    /// Tolerance on `‖Δβ‖∞ / max(‖β‖∞, 1)`.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            score_tol: 1e-9,
            step_tol: 1e-8,
            max_iter: 25,
            max_halvings: 10,
        }
    }
}

/// Information shrinking below this fraction of its value at the start means
/// the likelihood is flattening out towards infinity.
const COLLAPSE_RATIO: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta_hat: DVector<f64>,
    pub hazard: StepHazard,
    /// Partial information at `beta_hat`, `1/N`-normalized.
    pub information: DMatrix<f64>,
    pub information_inverse: DMatrix<f64>,
    pub n_phase1: usize,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Efficient-score rows `ℓ*_i` at the fit.
    pub efficient_scores: DMatrix<f64>,
    /// Influence rows `ℓ̃_i = information⁻¹ ℓ*_i` (unweighted).
    pub influence: DMatrix<f64>,
    /// `w_i ℓ̃_i`; zero for unsampled subjects.
    pub dfbeta: DMatrix<f64>,
    pub weights: Vec<f64>,
}

struct State {
    beta: DVector<f64>,
    sweep: Sweep,
    score: DVector<f64>,
    info: DMatrix<f64>,
    loglik: f64,
}

impl State {
    fn at(data: &CohortData, beta: DVector<f64>) -> Result<Self> {
        let sweep = Sweep::new(data, &beta)?;
        let score = sweep.score();
        let info = sweep.information();
        let loglik = sweep.log_partial_likelihood(&beta);
        Ok(Self {
            beta,
            sweep,
            score,
            info,
            loglik,
        })
    }
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn unit(v: &DVector<f64>) -> Vec<f64> {
    let n = v.norm();
    if n > 0.0 {
        (v / n).iter().copied().collect()
    } else {
        v.iter().copied().collect()
    }
}

pub fn fit_wl_cox(data: &CohortData, options: &SolverOptions) -> Result<CoxFit> {
    let p = data.n_covariates();
    let mut state = State::at(data, DVector::zeros(p))?;
    let initial_min_eig = linalg::min_eigenvalue(&state.info);
    let mut trace = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut converged = false;

    for iteration in 0..=options.max_iter {
        let score_norm = sup_norm(&state.score);
        if score_norm <= options.score_tol && last_step <= options.step_tol {
            trace.push(IterationRecord {
                iteration,
                score_norm,
                step_size: 0.0,
                objective: state.loglik,
            });
            converged = true;
            break;
        }
        if iteration == options.max_iter {
            trace.push(IterationRecord {
                iteration,
                score_norm,
                step_size: 0.0,
                objective: state.loglik,
            });
            break;
        }
        let inv = linalg::spd_inverse(&state.info)?;
        let delta = &inv * &state.score;
        if iteration > 0 && linalg::min_eigenvalue(&state.info) < COLLAPSE_RATIO * initial_min_eig {
            trace.push(IterationRecord {
                iteration,
                score_norm,
                step_size: 0.0,
                objective: state.loglik,
            });
            return Err(WlError::MonotoneLikelihood {
                direction: unit(&delta),
                trace,
            });
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &state.beta + &delta * step;
            if let Ok(next) = State::at(data, candidate) {
                if next.loglik >= state.loglik - 1e-13 * (1.0 + state.loglik.abs()) {
                    accepted = Some(next);
                    break;
                }
            }
            step *= 0.5;
        }
        trace.push(IterationRecord {
            iteration,
            score_norm,
            step_size: if accepted.is_some() { step } else { 0.0 },
            objective: state.loglik,
        });
        let Some(next) = accepted else {
            return Err(WlError::MonotoneLikelihood {
                direction: unit(&delta),
                trace,
            });
        };
        last_step = sup_norm(&(&next.beta - &state.beta)) / sup_norm(&next.beta).max(1.0);
        state = next;
    }

    if !converged {
        return Err(WlError::NonConvergence { trace });
    }
    finish(data, state, trace)
}

fn finish(data: &CohortData, state: State, iterations: Vec<IterationRecord>) -> Result<CoxFit> {
    let information_inverse = linalg::spd_inverse(&state.info)?;
    let hazard = survival::hazard_from_sweep(&state.sweep, &state.beta);
    let efficient_scores = survival::score_rows(data, &state.sweep, &state.sweep.centered_jumps());
    let influence = &efficient_scores * &information_inverse;
    let mut dfbeta = influence.clone();
    for (i, w) in data.weights().iter().enumerate() {
        dfbeta.row_mut(i).scale_mut(*w);
    }
    Ok(CoxFit {
        beta_hat: state.beta,
        hazard,
        information: state.info,
        information_inverse,
        n_phase1: data.n_subjects(),
        iterations,
        converged: true,
        efficient_scores,
        influence,
        dfbeta,
        weights: data.weights().to_vec(),
    })
}

/// Breslow hazard at an externally supplied `beta`.
pub fn refit_hazard(data: &CohortData, beta: &DVector<f64>) -> Result<StepHazard> {
    survival::breslow_hazard(data, beta)
}

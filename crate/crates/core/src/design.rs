//! Two-phase sampling designs: per-subject inclusion probabilities, the
//! sampling-model parameter and its influence contributions, and phase-two draws.
//!
//! Stratum `0` and every stratum listed in `always_sampled_strata` form the
//! always-sampled stratum V₀: `π = 1`, and V₀ rows of every α matrix are zero.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IterationRecord, Result, WlError};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOneRecord {
    pub subject_id: String,
    pub stratum: u32,
    #[serde(default)]
    pub aux: Vec<f64>,
    pub sampled: bool,
    /// Subject-level known inclusion probability (Bernoulli designs only).
    #[serde(default)]
    pub known_pi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    BernoulliKnown,
    FinitePopulation,
    EstimatedStratified,
    EstimatedLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFormula {
    #[serde(default = "yes")]
    pub intercept: bool,
    /// Indices into each record's `aux` vector.
    #[serde(default)]
    pub aux_columns: Vec<usize>,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_SIGMA_MIN: f64 = 1e-3;

fn default_sigma_min() -> f64 {
    DEFAULT_SIGMA_MIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingDesign {
    pub mode: DesignMode,
    #[serde(default)]
    pub always_sampled_strata: Vec<u32>,
    /// Per-stratum inclusion probabilities for `bernoulli_known`.
    #[serde(default)]
    pub known_probs: BTreeMap<u32, f64>,
    #[serde(default)]
    pub logistic_formula: Option<LogisticFormula>,
    /// Smallest admissible inclusion probability.
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
}

impl SamplingDesign {
    pub fn new(mode: DesignMode) -> Self {
        Self {
            mode,
            always_sampled_strata: Vec::new(),
            known_probs: BTreeMap::new(),
            logistic_formula: None,
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }

    pub fn is_always_sampled(&self, stratum: u32) -> bool {
        stratum == 0 || self.always_sampled_strata.contains(&stratum)
    }

    pub fn is_estimated(&self) -> bool {
        self.mode != DesignMode::BernoulliKnown
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= 1.0) {
            return Err(WlError::config("sigma_min", "must lie in (0, 1]"));
        }
        for (j, p) in &self.known_probs {
            if !(*p >= 0.0 && *p <= 1.0) {
                return Err(WlError::config(
                    format!("known_probs.{j}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if self.mode == DesignMode::EstimatedLogistic {
            let f = self.logistic_formula.as_ref().ok_or_else(|| {
                WlError::config("logistic_formula", "required for estimated_logistic")
            })?;
            if !f.intercept && f.aux_columns.is_empty() {
                return Err(WlError::config("logistic_formula", "model has no terms"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCount {
    pub stratum: u32,
    pub n_total: usize,
    pub n_sampled: usize,
    pub always_sampled: bool,
}

/// Sampling probabilities and, for estimated designs, the α fit.
#[derive(Debug, Clone)]
pub struct WeightFit {
    pub mode: DesignMode,
    pub pi: Vec<f64>,
    pub sampled: Vec<bool>,
    pub stratum: Vec<u32>,
    /// `true` for subjects outside V₀.
    pub in_v0c: Vec<bool>,
    pub alpha: Vec<f64>,
    /// For stratified modes, the stratum each α component belongs to.
    pub alpha_strata: Vec<u32>,
    /// `N × q` rows of `ℓ̃^α`.
    pub alpha_influence: DMatrix<f64>,
    /// `N × q` rows of `π̇ (ξ − π) / (π(1 − π))`; `alpha_influence = alpha_score · Î⁻¹`.
    pub alpha_score: DMatrix<f64>,
    /// `N × q` rows of `∂π/∂α` at `α̂`.
    pub pi_dot: DMatrix<f64>,
    /// `(1/N) Σ_{V₀ᶜ} π̇^⊗2 / (π(1−π))`.
    pub alpha_information: DMatrix<f64>,
    pub stratum_counts: Vec<StratumCount>,
    pub trace: Vec<IterationRecord>,
}

impl WeightFit {
    /// `ξ_i / π_i`, zero for unsampled subjects.
    pub fn ipw_weights(&self) -> Vec<f64> {
        self.pi
            .iter()
            .zip(&self.sampled)
            .map(|(p, &s)| if s { 1.0 / p } else { 0.0 })
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.pi.len()
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }
}

fn stratum_counts(records: &[PhaseOneRecord], design: &SamplingDesign) -> Vec<StratumCount> {
    let mut map: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = map.entry(r.stratum).or_default();
        e.0 += 1;
        e.1 += usize::from(r.sampled);
    }
    map.into_iter()
        .map(|(stratum, (n_total, n_sampled))| StratumCount {
            stratum,
            n_total,
            n_sampled,
            always_sampled: design.is_always_sampled(stratum),
        })
        .collect()
}

pub fn compute_weights(records: &[PhaseOneRecord], design: &SamplingDesign) -> Result<WeightFit> {
    design.validate()?;
    if records.is_empty() {
        return Err(WlError::InvalidInput("no phase-one records".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if design.is_always_sampled(r.stratum) && !r.sampled {
            return Err(WlError::Stratum {
                stratum: r.stratum,
                reason: format!(
                    "subject {i} ({}) is in an always-sampled stratum but was not sampled",
                    r.subject_id
                ),
            });
        }
    }
    let n = records.len();
    let counts = stratum_counts(records, design);
    let sampled: Vec<bool> = records.iter().map(|r| r.sampled).collect();
    let in_v0c: Vec<bool> = records
        .iter()
        .map(|r| !design.is_always_sampled(r.stratum))
        .collect();

    let fit = match design.mode {
        DesignMode::BernoulliKnown => {
            let mut pi = vec![1.0; n];
            for (i, r) in records.iter().enumerate() {
                if !in_v0c[i] {
                    continue;
                }
                pi[i] = match (r.known_pi, design.known_probs.get(&r.stratum)) {
                    (Some(p), _) => p,
                    (None, Some(&p)) => p,
                    (None, None) => {
                        return Err(WlError::Stratum {
                            stratum: r.stratum,
                            reason: format!(
                                "no known sampling probability for subject {i} ({})",
                                r.subject_id
                            ),
                        })
                    }
                };
                if !(pi[i] <= 1.0) {
                    return Err(WlError::InvalidInput(format!(
                        "subject {i}: probability {} exceeds 1",
                        pi[i]
                    )));
                }
            }
            WeightFit {
                mode: design.mode,
                pi,
                sampled: sampled.clone(),
                stratum: Vec::new(),
                in_v0c: in_v0c.clone(),
                alpha: Vec::new(),
                alpha_strata: Vec::new(),
                alpha_influence: DMatrix::zeros(n, 0),
                alpha_score: DMatrix::zeros(n, 0),
                pi_dot: DMatrix::zeros(n, 0),
                alpha_information: DMatrix::zeros(0, 0),
                stratum_counts: counts,
                trace: Vec::new(),
            }
        }
        DesignMode::FinitePopulation | DesignMode::EstimatedStratified => {
            stratified_fit(records, design, counts, sampled.clone(), in_v0c.clone())?
        }
        DesignMode::EstimatedLogistic => {
            logistic_weight_fit(records, design, counts, sampled.clone(), in_v0c.clone())?
        }
    };

    let mut fit = fit;
    fit.stratum = records.iter().map(|r| r.stratum).collect();
    for i in 0..n {
        if fit.sampled[i] && fit.pi[i] < design.sigma_min {
            return Err(WlError::ProbabilityFloor {
                subject: i,
                pi: fit.pi[i],
                floor: design.sigma_min,
            });
        }
    }
    Ok(fit)
}

fn stratified_fit(
    records: &[PhaseOneRecord],
    design: &SamplingDesign,
    counts: Vec<StratumCount>,
    sampled: Vec<bool>,
    in_v0c: Vec<bool>,
) -> Result<WeightFit> {
    let n = records.len();
    let strata: Vec<&StratumCount> = counts.iter().filter(|c| !c.always_sampled).collect();
    for c in &strata {
        if c.n_sampled == 0 {
            return Err(WlError::Stratum {
                stratum: c.stratum,
                reason: "no sampled subjects".into(),
            });
        }
    }
    let q = strata.len();
    let column: BTreeMap<u32, usize> = strata
        .iter()
        .enumerate()
        .map(|(k, c)| (c.stratum, k))
        .collect();
    let alpha: Vec<f64> = strata
        .iter()
        .map(|c| c.n_sampled as f64 / c.n_total as f64)
        .collect();
    let nf = n as f64;

    let mut pi = vec![1.0; n];
    let mut influence = DMatrix::zeros(n, q);
    let mut score = DMatrix::zeros(n, q);
    let mut pi_dot = DMatrix::zeros(n, q);
    for (i, r) in records.iter().enumerate() {
        let Some(&k) = column.get(&r.stratum) else {
            continue;
        };
        let a = alpha[k];
        pi[i] = a;
        pi_dot[(i, k)] = 1.0;
        if a < 1.0 {
            // degenerate strata (n_j = N_j) carry no sampling variability
            let xi = f64::from(u8::from(r.sampled));
            score[(i, k)] = (xi - a) / (a * (1.0 - a));
            influence[(i, k)] = nf / strata[k].n_total as f64 * (xi - a);
        }
    }
    let info = DMatrix::from_diagonal(&DVector::from_iterator(
        q,
        strata.iter().zip(&alpha).map(|(c, &a)| {
            if a < 1.0 {
                c.n_total as f64 / (nf * a * (1.0 - a))
            } else {
                0.0
            }
        }),
    ));
    Ok(WeightFit {
        mode: design.mode,
        pi,
        sampled,
        stratum: Vec::new(),
        in_v0c,
        alpha,
        alpha_strata: strata.iter().map(|c| c.stratum).collect(),
        alpha_influence: influence,
        alpha_score: score,
        pi_dot,
        alpha_information: info,
        stratum_counts: counts,
        trace: Vec::new(),
    })
}

/// Logistic-model design row for a record: optional intercept then the selected aux columns.
pub fn logistic_row(record: &PhaseOneRecord, formula: &LogisticFormula) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(formula.aux_columns.len() + 1);
    if formula.intercept {
        row.push(1.0);
    }
    for &c in &formula.aux_columns {
        let v = record.aux.get(c).copied().ok_or_else(|| {
            WlError::InvalidInput(format!(
                "subject {}: missing aux column {c}",
                record.subject_id
            ))
        })?;
        if !v.is_finite() {
            return Err(WlError::InvalidInput(format!(
                "subject {}: aux column {c} is not finite",
                record.subject_id
            )));
        }
        row.push(v);
    }
    Ok(row)
}

fn logistic_weight_fit(
    records: &[PhaseOneRecord],
    design: &SamplingDesign,
    counts: Vec<StratumCount>,
    sampled: Vec<bool>,
    in_v0c: Vec<bool>,
) -> Result<WeightFit> {
    let n = records.len();
    let formula = design.logistic_formula.as_ref().expect("validated");
    let q = usize::from(formula.intercept) + formula.aux_columns.len();
    let idx: Vec<usize> = (0..n).filter(|&i| in_v0c[i]).collect();
    let mut x = DMatrix::zeros(idx.len(), q);
    for (row, &i) in idx.iter().enumerate() {
        let v = logistic_row(&records[i], formula)?;
        x.row_mut(row).copy_from_slice(&v);
    }
    let xi: Vec<bool> = idx.iter().map(|&i| sampled[i]).collect();
    let lf = fit_logistic_alpha(&x, &xi, n)?;

    let mut pi = vec![1.0; n];
    let mut influence = DMatrix::zeros(n, q);
    let mut score = DMatrix::zeros(n, q);
    let mut pi_dot = DMatrix::zeros(n, q);
    for (row, &i) in idx.iter().enumerate() {
        pi[i] = lf.pi[row];
        influence.set_row(i, &lf.influence.row(row));
        score.set_row(i, &lf.score.row(row));
        pi_dot.set_row(i, &lf.pi_dot.row(row));
    }
    Ok(WeightFit {
        mode: design.mode,
        pi,
        sampled,
        stratum: Vec::new(),
        in_v0c,
        alpha: lf.alpha.iter().copied().collect(),
        alpha_strata: Vec::new(),
        alpha_influence: influence,
        alpha_score: score,
        pi_dot,
        alpha_information: lf.information,
        stratum_counts: counts,
        trace: lf.trace,
    })
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub alpha: DVector<f64>,
    pub pi: Vec<f64>,
    /// Rows `Î⁻¹ x_i (ξ_i − π̂_i)`.
    pub influence: DMatrix<f64>,
    /// Rows `x_i (ξ_i − π̂_i)`.
    pub score: DMatrix<f64>,
    /// Rows `π̂_i(1 − π̂_i) x_i`.
    pub pi_dot: DMatrix<f64>,
    /// `(1/N) Σ π̂(1 − π̂) x xᵀ`.
    pub information: DMatrix<f64>,
    pub trace: Vec<IterationRecord>,
}

const LOGISTIC_TOL: f64 = 1e-10;
const LOGISTIC_MAX_ITER: usize = 50;
/// |linear predictor| beyond this puts fitted probabilities within 1e-15 of 0 or 1.
const SEPARATION_ETA: f64 = 35.0;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `Σ ξ η − log(1 + e^η)`, evaluated stably.
fn logistic_loglik(x: &DMatrix<f64>, xi: &[bool], alpha: &DVector<f64>) -> f64 {
    let eta = x * alpha;
    eta.iter()
        .zip(xi)
        .map(|(&e, &s)| {
            let log1p = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            if s {
                e - log1p
            } else {
                -log1p
            }
        })
        .sum()
}

/// Maximum-likelihood logistic fit of `ξ` on the rows of `x` (subjects outside
/// V₀ only). `n_total` is the phase-one size N used to normalize the information.
pub fn fit_logistic_alpha(x: &DMatrix<f64>, xi: &[bool], n_total: usize) -> Result<LogisticFit> {
    let (m, q) = x.shape();
    if m != xi.len() {
        return Err(WlError::InvalidInput(
            "design rows and indicators differ in length".into(),
        ));
    }
    if m <= q {
        return Err(WlError::Logistic {
            reason: format!("{m} subjects for {q} parameters"),
            trace: Vec::new(),
        });
    }
    let nf = n_total as f64;
    let mut alpha = DVector::zeros(q);
    let mut trace = Vec::new();
    let mut ll = logistic_loglik(x, xi, &alpha);

    let eval = |alpha: &DVector<f64>| {
        let eta = x * alpha;
        let pi: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut score = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for i in 0..m {
            let row = x.row(i).transpose();
            let r = f64::from(u8::from(xi[i])) - pi[i];
            score.axpy(r, &row, 1.0);
            info.ger(pi[i] * (1.0 - pi[i]), &row, &row, 1.0);
        }
        (eta, pi, score / nf, info / nf)
    };

    for iteration in 0..=LOGISTIC_MAX_ITER {
        let (eta, _, score, info) = eval(&alpha);
        let norm = score.amax();
        let max_eta = eta.amax();
        if max_eta > SEPARATION_ETA {
            trace.push(IterationRecord {
                iteration,
                score_norm: norm,
                step_size: 0.0,
                objective: ll,
            });
            return Err(WlError::Logistic {
                reason: format!(
                    "fitted probabilities reach 0 or 1 (|α| = {:.3e}); the data are separated",
                    alpha.norm()
                ),
                trace,
            });
        }
        if norm <= LOGISTIC_TOL {
            trace.push(IterationRecord {
                iteration,
                score_norm: norm,
                step_size: 0.0,
                objective: ll,
            });
            return logistic_finish(x, xi, alpha, nf, trace);
        }
        if iteration == LOGISTIC_MAX_ITER {
            trace.push(IterationRecord {
                iteration,
                score_norm: norm,
                step_size: 0.0,
                objective: ll,
            });
            break;
        }
        let inv = linalg::spd_inverse(&info).map_err(|_| WlError::Logistic {
            reason: "design matrix is not of full rank".into(),
            trace: trace.clone(),
        })?;
        let delta = inv * score;
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand = &alpha + &delta * step;
            let cand_ll = logistic_loglik(x, xi, &cand);
            if cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                next = Some((cand, cand_ll));
                break;
            }
            step *= 0.5;
        }
        trace.push(IterationRecord {
            iteration,
            score_norm: norm,
            step_size: step,
            objective: ll,
        });
        let Some((a, l)) = next else {
            return Err(WlError::Logistic {
                reason: "line search failed".into(),
                trace,
            });
        };
        alpha = a;
        ll = l;
    }
    Err(WlError::Logistic {
        reason: format!("no convergence after {LOGISTIC_MAX_ITER} iterations"),
        trace,
    })
}

fn logistic_finish(
    x: &DMatrix<f64>,
    xi: &[bool],
    alpha: DVector<f64>,
    nf: f64,
    trace: Vec<IterationRecord>,
) -> Result<LogisticFit> {
    let (m, q) = x.shape();
    let pi: Vec<f64> = (x * &alpha).iter().map(|&e| sigmoid(e)).collect();
    let mut info = DMatrix::zeros(q, q);
    let mut score = DMatrix::zeros(m, q);
    let mut pi_dot = DMatrix::zeros(m, q);
    for i in 0..m {
        let row = x.row(i);
        let v = pi[i] * (1.0 - pi[i]);
        let r = f64::from(u8::from(xi[i])) - pi[i];
        info.ger(v / nf, &row.transpose(), &row.transpose(), 1.0);
        score.set_row(i, &(row * r));
        pi_dot.set_row(i, &(row * v));
    }
    let inv = linalg::spd_inverse(&info).map_err(|_| WlError::Logistic {
        reason: "information is singular at the fit".into(),
        trace: trace.clone(),
    })?;
    let influence = &score * &inv;
    Ok(LogisticFit {
        alpha,
        pi,
        influence,
        score,
        pi_dot,
        information: info,
        trace,
    })
}

/// Reads a stratum-keyed map whose keys may arrive as strings, which is how
/// JSON object keys look once an internally tagged enum has buffered them.
pub(crate) fn stratum_keys<'de, D, V>(de: D) -> std::result::Result<BTreeMap<u32, V>, D::Error>
where
    D: serde::Deserializer<'de>,
    V: Deserialize<'de>,
{
    let raw = BTreeMap::<String, V>::deserialize(de)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u32>().map(|k| (k, v)).map_err(|_| {
                serde::de::Error::custom(format!("stratum key {k:?} is not a nonnegative integer"))
            })
        })
        .collect()
}

/// How phase-two indicators are generated in simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseTwoTarget {
    /// Independent coin flips with per-stratum probabilities.
    Bernoulli {
        #[serde(deserialize_with = "stratum_keys")]
        probs: BTreeMap<u32, f64>,
    },
    /// Exactly `sizes[j]` subjects without replacement from stratum j.
    FixedSize {
        #[serde(deserialize_with = "stratum_keys")]
        sizes: BTreeMap<u32, usize>,
    },
    /// Independent coin flips with `logistic(x_iᵀα)` probabilities.
    Logistic {
        alpha: Vec<f64>,
        formula: LogisticFormula,
    },
}

/// Overwrites `sampled` on every record. V₀ is always fully sampled.
pub fn draw_phase_two<R: Rng + ?Sized>(
    records: &mut [PhaseOneRecord],
    design: &SamplingDesign,
    target: &PhaseTwoTarget,
    rng: &mut R,
) -> Result<()> {
    match target {
        PhaseTwoTarget::Bernoulli { probs } => {
            for r in records.iter_mut() {
                if design.is_always_sampled(r.stratum) {
                    r.sampled = true;
                    continue;
                }
                let p = *probs.get(&r.stratum).ok_or_else(|| WlError::Stratum {
                    stratum: r.stratum,
                    reason: "no target probability".into(),
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(WlError::Stratum {
                        stratum: r.stratum,
                        reason: format!("target probability {p} outside [0, 1]"),
                    });
                }
                r.sampled = rng.random_bool(p);
            }
        }
        PhaseTwoTarget::FixedSize { sizes } => {
            let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                members.entry(r.stratum).or_default().push(i);
            }
            for (stratum, mut idx) in members {
                if design.is_always_sampled(stratum) {
                    idx.iter().for_each(|&i| records[i].sampled = true);
                    continue;
                }
                let n_j = *sizes.get(&stratum).ok_or_else(|| WlError::Stratum {
                    stratum,
                    reason: "no target sample size".into(),
                })?;
                if n_j > idx.len() {
                    return Err(WlError::Stratum {
                        stratum,
                        reason: format!("sample size {n_j} exceeds stratum size {}", idx.len()),
                    });
                }
                idx.iter().for_each(|&i| records[i].sampled = false);
                let (chosen, _) = idx.partial_shuffle(rng, n_j);
                chosen.iter().for_each(|&i| records[i].sampled = true);
            }
        }
        PhaseTwoTarget::Logistic { alpha, formula } => {
            for r in records.iter_mut() {
                if design.is_always_sampled(r.stratum) {
                    r.sampled = true;
                    continue;
                }
                let x = logistic_row(r, formula)?;
                if x.len() != alpha.len() {
                    return Err(WlError::InvalidInput(format!(
                        "logistic target has {} coefficients for {} terms",
                        alpha.len(),
                        x.len()
                    )));
                }
                let eta: f64 = x.iter().zip(alpha).map(|(a, b)| a * b).sum();
                r.sampled = rng.random_bool(sigmoid(eta));
            }
        }
    }
    Ok(())
}

/// Inclusion probabilities implied by a target, for subjects of the given records
/// (used for the known-π route and for true-α comparisons in simulation).
pub fn target_probabilities(
    records: &[PhaseOneRecord],
    design: &SamplingDesign,
    target: &PhaseTwoTarget,
) -> Result<Vec<f64>> {
    let mut totals: BTreeMap<u32, usize> = BTreeMap::new();
    for r in records {
        *totals.entry(r.stratum).or_default() += 1;
    }
    records
        .iter()
        .map(|r| {
            if design.is_always_sampled(r.stratum) {
                return Ok(1.0);
            }
            match target {
                PhaseTwoTarget::Bernoulli { probs } => {
                    probs
                        .get(&r.stratum)
                        .copied()
                        .ok_or_else(|| WlError::Stratum {
                            stratum: r.stratum,
                            reason: "no target probability".into(),
                        })
                }
                PhaseTwoTarget::FixedSize { sizes } => {
                    let n_j = *sizes.get(&r.stratum).ok_or_else(|| WlError::Stratum {
                        stratum: r.stratum,
                        reason: "no target sample size".into(),
                    })?;
                    Ok(n_j as f64 / totals[&r.stratum] as f64)
                }
                PhaseTwoTarget::Logistic { alpha, formula } => {
                    let x = logistic_row(r, formula)?;
                    Ok(sigmoid(x.iter().zip(alpha).map(|(a, b)| a * b).sum()))
                }
            }
        })
        .collect()
}

//! Weighted risk-set sums and the Cox partial-likelihood quantities built on them.
//!
//! Every empirical average carries a `1/N` factor where `N` is the number of
//! phase-one subjects (rows of [`CohortData`]), sampled or not. Subjects with
//! weight zero are skipped entirely, so their time and covariate values may be
//! arbitrary placeholders.
//!
//! Internally covariates are centered at their weighted mean before
//! exponentiation. Ratios such as `S1/S0` and the partial information are
//! shift-invariant; the public [`RiskSetSums`] and [`StepHazard`] are mapped
//! back to the original scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WlError};

#[derive(Debug, Clone, PartialEq)]
pub struct CohortData {
    times: Vec<f64>,
    status: Vec<bool>,
    covariates: DMatrix<f64>,
    weights: Vec<f64>,
}

impl CohortData {
    /// `covariates` is `n_subjects × p`, one row per subject. `weights[i]` is
    /// `ξ_i / π_i`, zero for subjects not sampled at phase two.
    pub fn new(
        times: Vec<f64>,
        status: Vec<bool>,
        covariates: DMatrix<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(WlError::InvalidInput("no subjects".into()));
        }
        if status.len() != n || covariates.nrows() != n || weights.len() != n {
            return Err(WlError::InvalidInput(format!(
                "length mismatch: {} times, {} status, {} covariate rows, {} weights",
                n,
                status.len(),
                covariates.nrows(),
                weights.len()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(WlError::InvalidInput(
                "at least one covariate is required".into(),
            ));
        }
        for i in 0..n {
            let w = weights[i];
            if !(w >= 0.0) || !w.is_finite() {
                return Err(WlError::InvalidInput(format!(
                    "subject {i}: weight {w} is not a finite nonnegative number"
                )));
            }
            if w > 0.0 {
                if !(times[i] >= 0.0) || !times[i].is_finite() {
                    return Err(WlError::InvalidInput(format!(
                        "subject {i}: time {} is not finite and nonnegative",
                        times[i]
                    )));
                }
                if covariates.row(i).iter().any(|z| !z.is_finite()) {
                    return Err(WlError::InvalidInput(format!(
                        "subject {i}: non-finite covariate"
                    )));
                }
            }
        }
        if !(0..n).any(|i| status[i] && weights[i] > 0.0) {
            return Err(WlError::NoEvents);
        }
        Ok(Self {
            times,
            status,
            covariates,
            weights,
        })
    }

    /// Full-cohort data: every weight is one.
    pub fn unweighted(
        times: Vec<f64>,
        status: Vec<bool>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = times.len();
        Self::new(times, status, covariates, vec![1.0; n])
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.status.clone(),
            self.covariates.clone(),
            weights,
        )
    }

    pub fn n_subjects(&self) -> usize {
        self.times.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn covariate_row(&self, i: usize) -> DVector<f64> {
        self.covariates.row(i).transpose()
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.n_covariates() {
            return Err(WlError::InvalidInput(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.n_covariates()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(WlError::InvalidInput("beta is not finite".into()));
        }
        Ok(())
    }
}

/// `Ŝ⁽⁰⁾, Ŝ⁽¹⁾, Ŝ⁽²⁾` at each distinct weighted event time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetSums {
    pub event_times: Vec<f64>,
    pub s0: Vec<f64>,
    pub s1: Vec<DVector<f64>>,
    pub s2: Vec<DMatrix<f64>>,
}

/// Right-continuous step function with positive jumps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepHazard {
    pub jump_times: Vec<f64>,
    pub jumps: Vec<f64>,
}

impl StepHazard {
    pub fn cumulative(&self, t: f64) -> f64 {
        self.jump_times
            .iter()
            .zip(&self.jumps)
            .take_while(|(s, _)| **s <= t)
            .map(|(_, d)| d)
            .sum()
    }

    /// Cumulative hazard right after each jump.
    pub fn cumulative_at_jumps(&self) -> Vec<f64> {
        self.jumps
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    }
}

/// Centered risk-set sweep shared by every public quantity in this module.
#[derive(Debug, Clone)]
pub(crate) struct Sweep {
    n: f64,
    /// Weighted covariate mean used for centering.
    pub center: DVector<f64>,
    /// `e^{(Z_i - center)β}` for weighted subjects, 0 otherwise.
    pub risk: Vec<f64>,
    pub event_times: Vec<f64>,
    /// Weighted number of events at each event time.
    pub d_weight: Vec<f64>,
    /// Centered `Ŝ` values (already divided by N).
    pub s0c: Vec<f64>,
    pub s1c: Vec<DVector<f64>>,
    pub s2c: Vec<DMatrix<f64>>,
    /// For subject i, index of the last event time `≤ T_i`.
    pub last_event: Vec<Option<usize>>,
    /// Sum over events at each time of `w_i (Z_i - center)`, unnormalized.
    pub event_z: Vec<DVector<f64>>,
}

impl Sweep {
    pub fn new(data: &CohortData, beta: &DVector<f64>) -> Result<Self> {
        data.check_beta(beta)?;
        let n = data.n_subjects();
        let p = data.n_covariates();
        let w = &data.weights;

        let mut active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        let wsum: f64 = active.iter().map(|&i| w[i]).sum();
        let mut center = DVector::zeros(p);
        for &i in &active {
            center += data.covariate_row(i) * w[i];
        }
        center /= wsum;

        let mut risk = vec![0.0; n];
        let mut zc: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        for &i in &active {
            let z = data.covariate_row(i) - &center;
            let e = z.dot(beta).exp();
            if !e.is_finite() {
                return Err(WlError::Overflow { subject: i });
            }
            risk[i] = e;
            zc[i] = z;
        }

        // descending time; stable so ties keep input order
        active.sort_by(|&a, &b| data.times[b].total_cmp(&data.times[a]));

        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut rev_times = Vec::new();
        let mut rev_d = Vec::new();
        let mut rev_s0 = Vec::new();
        let mut rev_s1 = Vec::new();
        let mut rev_s2 = Vec::new();
        let mut rev_ez = Vec::new();

        let mut pos = 0;
        while pos < active.len() {
            let t = data.times[active[pos]];
            let mut end = pos;
            let mut d = 0.0;
            let mut ez = DVector::zeros(p);
            while end < active.len() && data.times[active[end]] == t {
                let i = active[end];
                let wr = w[i] * risk[i];
                s0 += wr;
                s1.axpy(wr, &zc[i], 1.0);
                s2.ger(wr, &zc[i], &zc[i], 1.0);
                if data.status[i] {
                    d += w[i];
                    ez.axpy(w[i], &zc[i], 1.0);
                }
                end += 1;
            }
            if d > 0.0 {
                if !(s0 > 0.0) {
                    return Err(WlError::EmptyRiskSet { time: t });
                }
                rev_times.push(t);
                rev_d.push(d);
                rev_s0.push(s0);
                rev_s1.push(s1.clone());
                rev_s2.push(s2.clone());
                rev_ez.push(ez);
            }
            pos = end;
        }
        if rev_times.is_empty() {
            return Err(WlError::NoEvents);
        }

        let nf = n as f64;
        let event_times: Vec<f64> = rev_times.into_iter().rev().collect();
        let d_weight: Vec<f64> = rev_d.into_iter().rev().collect();
        let s0c: Vec<f64> = rev_s0.into_iter().rev().map(|v| v / nf).collect();
        let s1c: Vec<DVector<f64>> = rev_s1.into_iter().rev().map(|v| v / nf).collect();
        let s2c: Vec<DMatrix<f64>> = rev_s2.into_iter().rev().map(|v| v / nf).collect();
        let event_z: Vec<DVector<f64>> = rev_ez.into_iter().rev().collect();

        let last_event = (0..n)
            .map(|i| {
                let k = event_times.partition_point(|&s| s <= data.times[i]);
                k.checked_sub(1)
            })
            .collect();

        Ok(Self {
            n: nf,
            center,
            risk,
            event_times,
            d_weight,
            s0c,
            s1c,
            s2c,
            last_event,
            event_z,
        })
    }

    /// Centered `m̂(t_k) - center`.
    pub fn mean_c(&self, k: usize) -> DVector<f64> {
        &self.s1c[k] / self.s0c[k]
    }

    /// Breslow jumps multiplied by `e^{center·β}`, i.e. `dW_k / (N Ŝ⁽⁰⁾_c)`.
    pub fn centered_jumps(&self) -> Vec<f64> {
        self.d_weight
            .iter()
            .zip(&self.s0c)
            .map(|(d, s0)| d / (self.n * s0))
            .collect()
    }

    pub fn score(&self) -> DVector<f64> {
        let p = self.center.len();
        let mut u = DVector::zeros(p);
        for k in 0..self.event_times.len() {
            u += &self.event_z[k] - self.mean_c(k) * self.d_weight[k];
        }
        u / self.n
    }

    pub fn information(&self) -> DMatrix<f64> {
        let p = self.center.len();
        let mut info = DMatrix::zeros(p, p);
        for k in 0..self.event_times.len() {
            let m = self.mean_c(k);
            let v = &self.s2c[k] / self.s0c[k] - &m * m.transpose();
            info += v * self.d_weight[k];
        }
        crate::linalg::symmetrize(&info) / self.n
    }

    pub fn log_partial_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let mut ll = 0.0;
        for k in 0..self.event_times.len() {
            ll += self.event_z[k].dot(beta) - self.d_weight[k] * (self.n * self.s0c[k]).ln();
        }
        ll / self.n
    }
}

/// `Ŝ⁽⁰⁾(t;β)`, `Ŝ⁽¹⁾(t;β)`, `Ŝ⁽²⁾(t;β)` at each distinct time carrying a weighted event.
pub fn compute_risk_sums(data: &CohortData, beta: &DVector<f64>) -> Result<RiskSetSums> {
    let sw = Sweep::new(data, beta)?;
    let scale = sw.center.dot(beta).exp();
    let c = &sw.center;
    let mut s0 = Vec::with_capacity(sw.event_times.len());
    let mut s1 = Vec::with_capacity(sw.event_times.len());
    let mut s2 = Vec::with_capacity(sw.event_times.len());
    for k in 0..sw.event_times.len() {
        let a0 = sw.s0c[k];
        let a1 = &sw.s1c[k];
        let a2 = &sw.s2c[k];
        s0.push(a0 * scale);
        s1.push((a1 + c * a0) * scale);
        let cross = a1 * c.transpose();
        s2.push((a2 + &cross + cross.transpose() + c * c.transpose() * a0) * scale);
    }
    if s0.iter().any(|v| !v.is_finite()) {
        return Err(WlError::Overflow { subject: 0 });
    }
    Ok(RiskSetSums {
        event_times: sw.event_times,
        s0,
        s1,
        s2,
    })
}

/// IPW Cox partial score `(1/N) Σ w_i Δ_i [Z_i − Ŝ⁽¹⁾/Ŝ⁽⁰⁾(T_i)]`.
pub fn partial_score(data: &CohortData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Sweep::new(data, beta)?.score())
}

/// Minus the Jacobian of [`partial_score`].
pub fn partial_information(data: &CohortData, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(Sweep::new(data, beta)?.information())
}

/// `(1/N) Σ w_i Δ_i [Z_iβ − log(N Ŝ⁽⁰⁾(T_i;β))]`, whose gradient is [`partial_score`].
pub fn log_partial_likelihood(data: &CohortData, beta: &DVector<f64>) -> Result<f64> {
    Ok(Sweep::new(data, beta)?.log_partial_likelihood(beta))
}

/// IPW Breslow estimator. Tied events share one risk set and pool into one jump.
pub fn breslow_hazard(data: &CohortData, beta: &DVector<f64>) -> Result<StepHazard> {
    let sw = Sweep::new(data, beta)?;
    Ok(hazard_from_sweep(&sw, beta))
}

pub(crate) fn hazard_from_sweep(sw: &Sweep, beta: &DVector<f64>) -> StepHazard {
    let unshift = (-sw.center.dot(beta)).exp();
    StepHazard {
        jump_times: sw.event_times.clone(),
        jumps: sw
            .centered_jumps()
            .into_iter()
            .map(|j| j * unshift)
            .collect(),
    }
}

/// Per-subject efficient score `ℓ*_i`, one row per subject (zero rows for
/// weight-zero subjects):
///
/// `Δ_i[Z_i − m̂(T_i)] − e^{Z_iβ} Σ_{t_k ≤ T_i} [Z_i − m̂(t_k)] dΛ̂_k`.
///
/// `hazard` must be the Breslow estimate at the same `beta`.
pub fn efficient_score_contributions(
    data: &CohortData,
    beta: &DVector<f64>,
    hazard: &StepHazard,
) -> Result<DMatrix<f64>> {
    let sw = Sweep::new(data, beta)?;
    if hazard.jump_times != sw.event_times {
        return Err(WlError::InvalidInput(
            "hazard jump times do not match the weighted event times".into(),
        ));
    }
    // jumps rescaled into the centered frame: e^{Zβ} dΛ = e^{(Z-c)β} (e^{cβ} dΛ)
    let shift = sw.center.dot(beta).exp();
    let jumps: Vec<f64> = hazard.jumps.iter().map(|j| j * shift).collect();
    Ok(score_rows(data, &sw, &jumps))
}

pub(crate) fn score_rows(data: &CohortData, sw: &Sweep, centered_jumps: &[f64]) -> DMatrix<f64> {
    let n = data.n_subjects();
    let p = data.n_covariates();
    let kmax = sw.event_times.len();
    // running Σ dΛ_k and Σ m_k dΛ_k over event times
    let mut cum_jump = Vec::with_capacity(kmax);
    let mut cum_mean = Vec::with_capacity(kmax);
    let mut a = 0.0;
    let mut b = DVector::zeros(p);
    for (k, &dl) in centered_jumps.iter().enumerate() {
        a += dl;
        b.axpy(dl, &sw.mean_c(k), 1.0);
        cum_jump.push(a);
        cum_mean.push(b.clone());
    }

    let mut rows = DMatrix::zeros(n, p);
    for i in 0..n {
        if data.weights[i] <= 0.0 {
            continue;
        }
        let Some(k) = sw.last_event[i] else {
            continue;
        };
        let z = data.covariate_row(i) - &sw.center;
        let mut row = -(&z * cum_jump[k] - &cum_mean[k]) * sw.risk[i];
        if data.status[i] {
            // T_i is itself an event time, so k indexes it
            row += &z - sw.mean_c(k);
        }
        rows.set_row(i, &row.transpose());
    }
    rows
}

//! Covariance estimators for `β̂`. Every function returns the covariance of
//! `β̂` itself, i.e. the asymptotic variance of `√N(β̂ − β₀)` divided by N.
//!
//! Finite-sample conventions: residual cross-products are divided by N and
//! within-stratum moments by `n_j`, so the regression route and the
//! stratified closed form agree exactly.

use nalgebra::DMatrix;

use crate::design::{DesignMode, WeightFit};
use crate::error::{Result, WlError};
use crate::estimator::CoxFit;
use crate::linalg;

/// Which estimate of the complete-data variance `Ĩ⁻¹` leads a closed-form display.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeadingTerm {
    /// Inverse of the observed IPW partial information.
    ModelBased,
    /// IPW second moment of the influence rows, `(1/N) Σ w_i ℓ̃_i^⊗2`.
    Empirical,
}

fn check_sizes(fit: &CoxFit, weights: &WeightFit) -> Result<()> {
    if fit.n_phase1 != weights.n_subjects() {
        return Err(WlError::InvalidInput(format!(
            "fit has {} subjects, weights have {}",
            fit.n_phase1,
            weights.n_subjects()
        )));
    }
    Ok(())
}

pub fn var_model_based(fit: &CoxFit) -> Result<DMatrix<f64>> {
    let inv = linalg::spd_inverse(&fit.information)?;
    Ok(inv / fit.n_phase1 as f64)
}

fn influence_outer(fit: &CoxFit, i: usize) -> DMatrix<f64> {
    let row = fit.influence.row(i).transpose();
    linalg::outer(&row)
}

/// `[Ĩ⁻¹ + (1/N) Σ ξ_i (1 − π̂_i)/π̂_i² ℓ̃_i^⊗2] / N`.
pub fn var_bernoulli_known(fit: &CoxFit, weights: &WeightFit) -> Result<DMatrix<f64>> {
    check_sizes(fit, weights)?;
    let n = fit.n_phase1 as f64;
    let p = fit.beta_hat.len();
    let mut corr = DMatrix::zeros(p, p);
    for i in 0..fit.n_phase1 {
        if !weights.sampled[i] {
            continue;
        }
        let pi = weights.pi[i];
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(WlError::InvalidInput(format!(
                "sampled subject {i} has no valid probability ({pi})"
            )));
        }
        if pi < 1.0 {
            corr += influence_outer(fit, i) * ((1.0 - pi) / (pi * pi));
        }
    }
    let inv = linalg::spd_inverse(&fit.information)?;
    Ok(linalg::symmetrize(&(inv + corr / n)) / n)
}

/// Residual sums of squares and cross-products from regressing each dfbeta
/// column on the α-influence columns, divided by N².
pub fn var_residual_regression(fit: &CoxFit, weights: &WeightFit) -> Result<DMatrix<f64>> {
    check_sizes(fit, weights)?;
    let n = fit.n_phase1 as f64;
    let resid = linalg::regression_residuals(&fit.dfbeta, &weights.alpha_influence)?;
    Ok(linalg::symmetrize(&(resid.transpose() * &resid)) / (n * n))
}

/// Closed form of the estimated-weights variance from empirical moments:
/// `(1/N) Σ D_i^⊗2 − C Ŝ⁻¹ Cᵀ`, with `D` the dfbeta rows, `s` the α-score rows,
/// `C = (1/N) Σ D_i s_iᵀ` and `Ŝ = (1/N) Σ s_i^⊗2`. Divided by N.
pub fn var_estimated_weights_closed_form(
    fit: &CoxFit,
    weights: &WeightFit,
) -> Result<DMatrix<f64>> {
    check_sizes(fit, weights)?;
    let n = fit.n_phase1 as f64;
    let d = &fit.dfbeta;
    let keep: Vec<usize> = (0..weights.alpha_score.ncols())
        .filter(|&j| weights.alpha_score.column(j).iter().any(|v| *v != 0.0))
        .collect();
    let s = weights.alpha_score.select_columns(keep.iter());
    let total = d.transpose() * d / n;
    if s.ncols() == 0 {
        return Ok(linalg::symmetrize(&total) / n);
    }
    let cross = d.transpose() * &s / n;
    let middle = s.transpose() * &s / n;
    let inv = linalg::spd_inverse(&middle)
        .map_err(|_| WlError::RankDeficient("α-score moment matrix is singular".into()))?;
    let v = total - &cross * inv * cross.transpose();
    Ok(linalg::symmetrize(&v) / n)
}

/// Plug-in version of the estimated-weights variance: the known-weights
/// display minus `G Î⁻¹ Gᵀ`, `G = (1/N) Σ_{V₀ᶜ} (ξ_i/π̂_i) ℓ̃_i π̇_iᵀ / π̂_i`.
pub fn var_estimated_weights_plugin(fit: &CoxFit, weights: &WeightFit) -> Result<DMatrix<f64>> {
    let first = var_bernoulli_known(fit, weights)? * fit.n_phase1 as f64;
    let n = fit.n_phase1 as f64;
    let keep: Vec<usize> = (0..weights.q())
        .filter(|&j| weights.alpha_information[(j, j)] > 0.0)
        .collect();
    if keep.is_empty() {
        return Ok(first / n);
    }
    let p = fit.beta_hat.len();
    let mut g = DMatrix::zeros(p, keep.len());
    for i in 0..fit.n_phase1 {
        if !(weights.in_v0c[i] && weights.sampled[i]) {
            continue;
        }
        let pi = weights.pi[i];
        let pd = weights.pi_dot.row(i).select_columns(keep.iter());
        g += fit.influence.row(i).transpose() * pd / (pi * pi);
    }
    g /= n;
    let info = weights
        .alpha_information
        .select_rows(keep.iter())
        .select_columns(keep.iter());
    let inv = linalg::spd_inverse(&info)?;
    let v = first - &g * inv * g.transpose();
    Ok(linalg::symmetrize(&v) / n)
}

/// Stratified displays with plug-in `ν̂_j = N_j/N`, `p̂_j = n_j/N_j`:
/// `lead + Σ_j ν̂_j (1 − p̂_j)/p̂_j · M_j`, where `M_j` is the within-stratum
/// second moment (`use_second_moment`) or covariance of `ℓ̃` among sampled
/// subjects. Divided by N.
pub fn var_stratified_closed_form(
    fit: &CoxFit,
    weights: &WeightFit,
    use_second_moment: bool,
    leading: LeadingTerm,
) -> Result<DMatrix<f64>> {
    check_sizes(fit, weights)?;
    if weights.stratum.len() != fit.n_phase1 {
        return Err(WlError::InvalidInput(
            "weights carry no stratum labels".into(),
        ));
    }
    let n = fit.n_phase1 as f64;
    let p = fit.beta_hat.len();
    let mut corr = DMatrix::zeros(p, p);
    for c in weights.stratum_counts.iter().filter(|c| !c.always_sampled) {
        if c.n_sampled == 0 {
            return Err(WlError::Stratum {
                stratum: c.stratum,
                reason: "no sampled subjects".into(),
            });
        }
        let members: Vec<usize> = (0..fit.n_phase1)
            .filter(|&i| weights.stratum[i] == c.stratum && weights.sampled[i])
            .collect();
        let nj = members.len() as f64;
        let mut mean = nalgebra::DVector::zeros(p);
        let mut second = DMatrix::zeros(p, p);
        for &i in &members {
            let row = fit.influence.row(i).transpose();
            second += linalg::outer(&row);
            mean += row;
        }
        mean /= nj;
        second /= nj;
        let moment = if use_second_moment {
            second
        } else {
            second - linalg::outer(&mean)
        };
        let pj = c.n_sampled as f64 / c.n_total as f64;
        let nu = c.n_total as f64 / n;
        corr += moment * (nu * (1.0 - pj) / pj);
    }
    let lead = match leading {
        LeadingTerm::ModelBased => linalg::spd_inverse(&fit.information)?,
        LeadingTerm::Empirical => {
            let mut m = DMatrix::zeros(p, p);
            for i in 0..fit.n_phase1 {
                let w = fit.weights[i];
                if w > 0.0 {
                    m += influence_outer(fit, i) * w;
                }
            }
            m / n
        }
    };
    Ok(linalg::symmetrize(&(lead + corr)) / n)
}

pub fn standard_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// One covariance estimate with a human-readable description of its formula.
#[derive(Debug, Clone)]
pub struct LabeledCovariance {
    pub name: &'static str,
    pub label: &'static str,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub model_based: DMatrix<f64>,
    pub bernoulli_known: DMatrix<f64>,
    /// Regression-residual route (reduces to the empirical known-weights
    /// variance when the design has no α).
    pub fp_or_estimated: DMatrix<f64>,
    /// Additional estimators applicable to the design, including the three above.
    pub estimators: Vec<LabeledCovariance>,
    /// Uncentered R² of each dfbeta column regressed on the α-influence columns.
    pub residual_diagnostics: Vec<f64>,
}

impl VarianceReport {
    pub fn method_labels(&self) -> Vec<(&'static str, &'static str)> {
        self.estimators.iter().map(|e| (e.name, e.label)).collect()
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.estimators
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.covariance)
    }
}

pub const LABEL_MODEL: &str = "inverse observed IPW partial information, I^-1 / N";
pub const LABEL_BERNOULLI: &str =
    "Bernoulli sampling with known probabilities: [I^-1 + (1/N) sum xi (1-pi)/pi^2 l~^2] / N";
pub const LABEL_EMPIRICAL: &str = "empirical second moment of dfbeta rows, (1/N^2) sum D D^T";
pub const LABEL_RESIDUAL: &str =
    "residual cross-products of dfbeta regressed on alpha-influence rows, (1/N^2) sum R R^T";
pub const LABEL_PLUGIN: &str =
    "estimated weights, plug-in: Bernoulli known-weights variance minus G I_alpha^-1 G^T";
pub const LABEL_STRAT_SECOND: &str =
    "stratified Bernoulli: I^-1 + sum_j nu_j (1-p_j)/p_j E_j[l~^2]";
pub const LABEL_STRAT_VARIANCE: &str =
    "finite-population stratified: I^-1 + sum_j nu_j (1-p_j)/p_j Var_j(l~)";

/// All estimators applicable to the weight design.
pub fn variance_report(fit: &CoxFit, weights: &WeightFit) -> Result<VarianceReport> {
    let model_based = var_model_based(fit)?;
    let bernoulli_known = var_bernoulli_known(fit, weights)?;
    let fp_or_estimated = var_residual_regression(fit, weights)?;

    let mut estimators = vec![
        LabeledCovariance {
            name: "model_based",
            label: LABEL_MODEL,
            covariance: model_based.clone(),
        },
        LabeledCovariance {
            name: "bernoulli_known",
            label: LABEL_BERNOULLI,
            covariance: bernoulli_known.clone(),
        },
        LabeledCovariance {
            name: "residual_regression",
            label: if weights.q() == 0 {
                LABEL_EMPIRICAL
            } else {
                LABEL_RESIDUAL
            },
            covariance: fp_or_estimated.clone(),
        },
    ];
    if weights.q() > 0 {
        estimators.push(LabeledCovariance {
            name: "estimated_plugin",
            label: LABEL_PLUGIN,
            covariance: var_estimated_weights_plugin(fit, weights)?,
        });
    }
    if matches!(
        weights.mode,
        DesignMode::FinitePopulation | DesignMode::EstimatedStratified
    ) {
        estimators.push(LabeledCovariance {
            name: "stratified_second_moment",
            label: LABEL_STRAT_SECOND,
            covariance: var_stratified_closed_form(fit, weights, true, LeadingTerm::ModelBased)?,
        });
        estimators.push(LabeledCovariance {
            name: "stratified_variance",
            label: LABEL_STRAT_VARIANCE,
            covariance: var_stratified_closed_form(fit, weights, false, LeadingTerm::ModelBased)?,
        });
    }

    let resid = linalg::regression_residuals(&fit.dfbeta, &weights.alpha_influence)?;
    let residual_diagnostics = (0..fit.dfbeta.ncols())
        .map(|k| {
            let tss = fit.dfbeta.column(k).norm_squared();
            if tss > 0.0 {
                1.0 - resid.column(k).norm_squared() / tss
            } else {
                0.0
            }
        })
        .collect();

    Ok(VarianceReport {
        model_based,
        bernoulli_known,
        fp_or_estimated,
        estimators,
        residual_diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{compute_weights, PhaseOneRecord, SamplingDesign};
    use crate::estimator::{fit_wl_cox, SolverOptions};
    use crate::survival::CohortData;
    use approx::assert_relative_eq;

    struct Fixture {
        records: Vec<PhaseOneRecord>,
        times: Vec<f64>,
        status: Vec<bool>,
        z: Vec<f64>,
    }

    /// Deterministic stratified fixture: strata 1..=3 plus an always-sampled stratum 0.
    fn fixture(copies: usize) -> Fixture {
        let base_t = [
            0.3, 1.2, 0.8, 2.0, 1.7, 0.5, 2.4, 1.1, 0.9, 1.9, 0.2, 1.4, 2.2, 0.7, 1.6, 1.0,
        ];
        let base_d = [1, 0, 1, 1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 0, 1, 0];
        let base_z = [
            0.5, -0.3, 1.2, 0.1, -1.0, 0.8, 0.0, 0.4, -0.6, 1.5, 0.9, -0.2, 0.3, -1.3, 0.6, 0.2,
        ];
        let base_s = [1, 1, 2, 2, 1, 3, 2, 3, 1, 0, 3, 2, 1, 2, 3, 1];
        let base_x = [1, 0, 1, 1, 1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1];
        let mut f = Fixture {
            records: vec![],
            times: vec![],
            status: vec![],
            z: vec![],
        };
        for c in 0..copies {
            for k in 0..base_t.len() {
                f.records.push(PhaseOneRecord {
                    subject_id: format!("{c}-{k}"),
                    stratum: base_s[k],
                    aux: vec![],
                    sampled: base_x[k] == 1,
                    known_pi: None,
                });
                f.times.push(base_t[k]);
                f.status.push(base_d[k] == 1);
                f.z.push(base_z[k]);
            }
        }
        f
    }

    fn fit_with(f: &Fixture, design: &SamplingDesign) -> (CoxFit, WeightFit) {
        let w = compute_weights(&f.records, design).unwrap();
        let data = CohortData::new(
            f.times.clone(),
            f.status.clone(),
            DMatrix::from_column_slice(f.z.len(), 1, &f.z),
            w.ipw_weights(),
        )
        .unwrap();
        (fit_wl_cox(&data, &SolverOptions::default()).unwrap(), w)
    }

    fn bernoulli(p: f64) -> SamplingDesign {
        let mut d = SamplingDesign::new(DesignMode::BernoulliKnown);
        for j in 1..=3 {
            d.known_probs.insert(j, p);
        }
        d
    }

    #[test]
    fn model_based_is_scalar_reciprocal() {
        let f = fixture(1);
        let (fit, _) = fit_with(&f, &bernoulli(0.5));
        let v = var_model_based(&fit).unwrap();
        assert_relative_eq!(
            v[(0, 0)],
            1.0 / fit.information[(0, 0)] / 16.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn bernoulli_with_unit_probabilities_is_model_based() {
        let mut f = fixture(1);
        f.records.iter_mut().for_each(|r| r.sampled = true);
        let (fit, w) = fit_with(&f, &bernoulli(1.0));
        assert_eq!(
            var_bernoulli_known(&fit, &w).unwrap(),
            var_model_based(&fit).unwrap()
        );
    }

    #[test]
    fn bernoulli_correction_matches_hand_sum() {
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &bernoulli(0.5));
        let n = 16.0;
        let mut corr = 0.0;
        for i in 0..16 {
            if f.records[i].sampled && f.records[i].stratum != 0 {
                let l = fit.influence[(i, 0)];
                corr += 0.5 / 0.25 * l * l;
            }
        }
        let expected = (1.0 / fit.information[(0, 0)] + corr / n) / n;
        assert_relative_eq!(
            var_bernoulli_known(&fit, &w).unwrap()[(0, 0)],
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn duplicating_subjects_halves_every_estimate() {
        for design in [
            bernoulli(0.5),
            SamplingDesign::new(DesignMode::EstimatedStratified),
        ] {
            let (f1, w1) = fit_with(&fixture(1), &design);
            let (f2, w2) = fit_with(&fixture(2), &design);
            assert_relative_eq!(f1.beta_hat[0], f2.beta_hat[0], epsilon = 1e-10);
            let pairs = [
                (var_model_based(&f1).unwrap(), var_model_based(&f2).unwrap()),
                (
                    var_bernoulli_known(&f1, &w1).unwrap(),
                    var_bernoulli_known(&f2, &w2).unwrap(),
                ),
                (
                    var_residual_regression(&f1, &w1).unwrap(),
                    var_residual_regression(&f2, &w2).unwrap(),
                ),
            ];
            for (a, b) in pairs {
                assert_relative_eq!(a[(0, 0)], 2.0 * b[(0, 0)], max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn no_alpha_reduces_to_empirical_dfbeta_moment() {
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &bernoulli(0.5));
        let v = var_residual_regression(&fit, &w).unwrap();
        let direct: f64 = fit.dfbeta.column(0).iter().map(|d| d * d).sum::<f64>() / 256.0;
        assert_relative_eq!(v[(0, 0)], direct, max_relative = 1e-14);
    }

    #[test]
    fn regression_matches_direct_stratified_formula() {
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::EstimatedStratified));
        let n = 16.0;
        // direct: (1/N)[Σ_{V0} ℓ̃² + Σ_j (N_j/n_j) Σ_{sampled j} ℓ̃²] + Σ_j ν_j (1-p_j)/p_j Var_j(ℓ̃)
        let mut lead = 0.0;
        let mut corr = 0.0;
        for j in 0..=3u32 {
            let all: Vec<usize> = (0..16).filter(|&i| f.records[i].stratum == j).collect();
            let smp: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| f.records[i].sampled)
                .collect();
            let nj = all.len() as f64;
            let mj = smp.len() as f64;
            let l: Vec<f64> = smp.iter().map(|&i| fit.influence[(i, 0)]).collect();
            let mean = l.iter().sum::<f64>() / mj;
            let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mj;
            lead += nj / mj * l.iter().map(|v| v * v).sum::<f64>();
            if j != 0 {
                let p = mj / nj;
                corr += nj / n * (1.0 - p) / p * var;
            }
        }
        let expected = (lead / n + corr) / n;
        let got = var_residual_regression(&fit, &w).unwrap()[(0, 0)];
        assert_relative_eq!(got, expected, max_relative = 1e-8);
        let closed =
            var_stratified_closed_form(&fit, &w, false, LeadingTerm::Empirical).unwrap()[(0, 0)];
        assert_relative_eq!(closed, expected, max_relative = 1e-10);
    }

    #[test]
    fn regression_and_moment_closed_form_agree() {
        let f = fixture(2);
        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::FinitePopulation));
        let a = var_residual_regression(&fit, &w).unwrap();
        let b = var_estimated_weights_closed_form(&fit, &w).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn plugin_matches_variance_display_for_strata() {
        // for the saturated stratified model, plug-in estimated-weights equals
        // the stratified variance display with the same leading term
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::EstimatedStratified));
        let plug = var_estimated_weights_plugin(&fit, &w).unwrap();
        let strat = var_stratified_closed_form(&fit, &w, false, LeadingTerm::ModelBased).unwrap();
        assert_relative_eq!(plug, strat, max_relative = 1e-10);
    }

    #[test]
    fn fully_sampled_stratum_has_no_correction() {
        let mut f = fixture(1);
        f.records.iter_mut().for_each(|r| r.sampled = true);
        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::FinitePopulation));
        let v = var_stratified_closed_form(&fit, &w, false, LeadingTerm::ModelBased).unwrap();
        assert_relative_eq!(v, var_model_based(&fit).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn second_moment_minus_variance_is_mean_outer_product() {
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::FinitePopulation));
        let a = var_stratified_closed_form(&fit, &w, true, LeadingTerm::ModelBased).unwrap();
        let b = var_stratified_closed_form(&fit, &w, false, LeadingTerm::ModelBased).unwrap();
        let n = 16.0;
        let mut expected = 0.0;
        for j in 1..=3u32 {
            let all: Vec<usize> = (0..16).filter(|&i| f.records[i].stratum == j).collect();
            let smp: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| f.records[i].sampled)
                .collect();
            let p = smp.len() as f64 / all.len() as f64;
            let mean = smp.iter().map(|&i| fit.influence[(i, 0)]).sum::<f64>() / smp.len() as f64;
            expected += all.len() as f64 / n * (1.0 - p) / p * mean * mean;
        }
        assert_relative_eq!((a - b)[(0, 0)], expected / n, max_relative = 1e-10);
    }

    #[test]
    fn report_lists_design_specific_estimators() {
        let f = fixture(1);
        let (fit, w) = fit_with(&f, &bernoulli(0.5));
        let r = variance_report(&fit, &w).unwrap();
        let names: Vec<_> = r.method_labels().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["model_based", "bernoulli_known", "residual_regression"]
        );
        assert_eq!(r.residual_diagnostics, vec![0.0]);

        let (fit, w) = fit_with(&f, &SamplingDesign::new(DesignMode::FinitePopulation));
        let r = variance_report(&fit, &w).unwrap();
        assert!(r.get("stratified_variance").is_some());
        assert!(r.get("estimated_plugin").is_some());
        assert!(r.residual_diagnostics[0] >= 0.0 && r.residual_diagnostics[0] <= 1.0);
    }
}

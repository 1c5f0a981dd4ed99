use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::generate::generate_cohort;
use crate::design::{compute_weights, draw_phase_two, PhaseOneRecord};
use crate::error::Result;
use crate::estimator::{fit_wl_cox, SolverOptions};
use crate::survival::CohortData;
use crate::variance::{self, LeadingTerm};
use crate::DesignMode;

/// Replicates whose failure share exceeds this mark the scenario unusable.
pub const MAX_FAILURE_RATE: f64 = 0.02;

const Z_975: f64 = 1.959_963_984_540_054;

/// How replicates are scheduled. Results never depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing; `threads: None` uses the global pool. Falls back
    /// to sequential when built without the `parallel` feature.
    Parallel {
        threads: Option<usize>,
    },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: None }
        } else {
            Execution::Sequential
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r`, computable without running replicates `0..r`.
pub fn child_seed(master_seed: u64, replicate: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(replicate))
}

pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(child_seed(master_seed, replicate))
}

/// `f(0), …, f(n-1)` in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok((0..n).map(f).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } => {
            use rayon::prelude::*;
            match threads {
                None => Ok((0..n).into_par_iter().map(f).collect()),
                Some(t) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(t)
                        .build()
                        .map_err(|e| {
                            crate::error::WlError::InvalidInput(format!("thread pool: {e}"))
                        })?;
                    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => Ok((0..n).map(f).collect()),
    }
}

/// Outcome of one replicate. Failed replicates keep their seed and error and
/// leave the numeric fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed_used: u64,
    pub converged: bool,
    pub error: Option<String>,
    pub n_events: usize,
    pub n_sampled: usize,
    pub beta_hat: Vec<f64>,
    pub se_model: Vec<f64>,
    pub se_bernoulli: Vec<f64>,
    /// From the regression-residual route.
    pub se_fp: Vec<f64>,
    /// Row-major p×p covariances.
    pub var_model: Vec<f64>,
    pub var_bernoulli: Vec<f64>,
    pub var_fp: Vec<f64>,
    /// Stratified closed forms (second moment / within-stratum variance), stratified designs only.
    pub var_strat_second: Option<Vec<f64>>,
    pub var_strat_variance: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn records_totals(records: &[PhaseOneRecord]) -> BTreeMap<u32, usize> {
    let mut totals = BTreeMap::new();
    for r in records {
        *totals.entry(r.stratum).or_default() += 1;
    }
    totals
}

fn sample_with(
    config: &ScenarioConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<PhaseOneRecord>, CohortData)> {
    let (mut records, full) = generate_cohort(config, rng)?;
    let target = config.phase_two_target(&records_totals(&records));
    draw_phase_two(&mut records, &config.design, &target, rng)?;
    Ok((records, full))
}

/// Phase-one cohort of replicate `r` with its phase-two indicators drawn,
/// exactly as `run_replicate` sees it. `full` carries unit weights.
pub fn replicate_sample(
    config: &ScenarioConfig,
    replicate: usize,
) -> Result<(Vec<PhaseOneRecord>, CohortData)> {
    config.validate()?;
    sample_with(
        config,
        &mut replicate_rng(config.master_seed, replicate as u64),
    )
}

fn replicate_inner(
    config: &ScenarioConfig,
    rng: &mut ChaCha12Rng,
    out: &mut ReplicateResult,
) -> Result<()> {
    let (records, full) = sample_with(config, rng)?;
    out.n_events = full.status().iter().filter(|&&d| d).count();
    out.n_sampled = records.iter().filter(|r| r.sampled).count();
    let weights = compute_weights(&records, &config.design)?;
    let data = full.with_weights(weights.ipw_weights())?;
    let fit = fit_wl_cox(&data, &SolverOptions::default())?;

    let model = variance::var_model_based(&fit)?;
    let bern = variance::var_bernoulli_known(&fit, &weights)?;
    let fp = variance::var_residual_regression(&fit, &weights)?;
    if matches!(
        weights.mode,
        DesignMode::FinitePopulation | DesignMode::EstimatedStratified
    ) {
        let second =
            variance::var_stratified_closed_form(&fit, &weights, true, LeadingTerm::ModelBased)?;
        let var =
            variance::var_stratified_closed_form(&fit, &weights, false, LeadingTerm::ModelBased)?;
        out.var_strat_second = Some(row_major(&second));
        out.var_strat_variance = Some(row_major(&var));
    }
    out.beta_hat = fit.beta_hat.iter().copied().collect();
    out.se_model = variance::standard_errors(&model);
    out.se_bernoulli = variance::standard_errors(&bern);
    out.se_fp = variance::standard_errors(&fp);
    out.var_model = row_major(&model);
    out.var_bernoulli = row_major(&bern);
    out.var_fp = row_major(&fp);
    Ok(())
}

/// Replicate `r` in isolation.
pub fn run_replicate(config: &ScenarioConfig, replicate: usize) -> ReplicateResult {
    let seed_used = child_seed(config.master_seed, replicate as u64);
    let mut rng = ChaCha12Rng::seed_from_u64(seed_used);
    let mut out = ReplicateResult {
        replicate,
        seed_used,
        converged: false,
        error: None,
        n_events: 0,
        n_sampled: 0,
        beta_hat: vec![],
        se_model: vec![],
        se_bernoulli: vec![],
        se_fp: vec![],
        var_model: vec![],
        var_bernoulli: vec![],
        var_fp: vec![],
        var_strat_second: None,
        var_strat_variance: None,
    };
    match replicate_inner(config, &mut rng, &mut out) {
        Ok(()) => out.converged = true,
        Err(e) => {
            // a late failure may leave partial numbers behind
            out.error = Some(format!("{}: {e}", e.kind()));
            for v in [
                &mut out.beta_hat,
                &mut out.se_model,
                &mut out.se_bernoulli,
                &mut out.se_fp,
                &mut out.var_model,
                &mut out.var_bernoulli,
                &mut out.var_fp,
            ] {
                v.clear();
            }
            out.var_strat_second = None;
            out.var_strat_variance = None;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    /// Mean over converged replicates of the estimated covariance of β̂.
    pub mean_cov: Vec<Vec<f64>>,
    /// Monte Carlo standard error of each diagonal entry of `mean_cov`.
    pub mean_var_mc_se: Vec<f64>,
    /// Share of nominal 95% Wald intervals containing `beta_true`.
    pub coverage: Vec<f64>,
    pub coverage_mc_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub converged: usize,
    pub failure_rate: f64,
    /// False when `failure_rate` exceeds the 2% budget.
    pub valid_for_acceptance: bool,
    pub beta_true: Vec<f64>,
    pub mean_beta: Vec<f64>,
    pub mean_beta_mc_se: Vec<f64>,
    /// Sample covariance (divisor R − 1) of β̂ across converged replicates.
    pub empirical_cov: Vec<Vec<f64>>,
    /// Monte Carlo standard error of each empirical variance.
    pub empirical_var_mc_se: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

impl StudySummary {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub summary: StudySummary,
    pub replicates: Vec<ReplicateResult>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn estimator_summary(
    name: &str,
    covs: &[&Vec<f64>],
    betas: &[&Vec<f64>],
    beta_true: &[f64],
    p: usize,
) -> EstimatorSummary {
    let r = covs.len() as f64;
    let mut mean = DMatrix::zeros(p, p);
    for c in covs {
        mean += DMatrix::from_row_slice(p, p, c);
    }
    mean /= r;
    let mean_var_mc_se = (0..p)
        .map(|k| {
            let ss: f64 = covs
                .iter()
                .map(|c| (c[k * p + k] - mean[(k, k)]).powi(2))
                .sum();
            (ss / (r - 1.0).max(1.0) / r).sqrt()
        })
        .collect();
    let coverage: Vec<f64> = (0..p)
        .map(|k| {
            let hits = covs
                .iter()
                .zip(betas)
                .filter(|(c, b)| {
                    (b[k] - beta_true[k]).abs() <= Z_975 * c[k * p + k].max(0.0).sqrt()
                })
                .count();
            hits as f64 / r
        })
        .collect();
    let coverage_mc_se = coverage
        .iter()
        .map(|c| (c * (1.0 - c) / r).sqrt())
        .collect();
    EstimatorSummary {
        name: name.to_string(),
        mean_cov: to_rows(&mean),
        mean_var_mc_se,
        coverage,
        coverage_mc_se,
    }
}

/// Aggregates replicate results in the order given.
pub fn summarize(config: &ScenarioConfig, results: &[ReplicateResult]) -> StudySummary {
    let p = config.p();
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.converged).collect();
    let failure_rate = if results.is_empty() {
        0.0
    } else {
        (results.len() - ok.len()) as f64 / results.len() as f64
    };
    let mut summary = StudySummary {
        replicates: results.len(),
        converged: ok.len(),
        failure_rate,
        valid_for_acceptance: failure_rate <= MAX_FAILURE_RATE,
        beta_true: config.beta_true.clone(),
        mean_beta: vec![],
        mean_beta_mc_se: vec![],
        empirical_cov: vec![],
        empirical_var_mc_se: vec![],
        estimators: vec![],
    };
    if ok.len() < 2 {
        summary.valid_for_acceptance = false;
        return summary;
    }
    let r = ok.len() as f64;
    let mut mean = vec![0.0; p];
    for rep in &ok {
        for k in 0..p {
            mean[k] += rep.beta_hat[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= r);
    let mut cov = DMatrix::zeros(p, p);
    let mut m4 = vec![0.0; p];
    for rep in &ok {
        for a in 0..p {
            let da = rep.beta_hat[a] - mean[a];
            m4[a] += da.powi(4);
            for b in 0..p {
                cov[(a, b)] += da * (rep.beta_hat[b] - mean[b]);
            }
        }
    }
    let var_biased: Vec<f64> = (0..p).map(|k| cov[(k, k)] / r).collect();
    cov /= r - 1.0;
    summary.mean_beta_mc_se = (0..p).map(|k| (cov[(k, k)] / r).sqrt()).collect();
    summary.empirical_var_mc_se = (0..p)
        .map(|k| ((m4[k] / r - var_biased[k].powi(2)).max(0.0) / r).sqrt())
        .collect();
    summary.mean_beta = mean;
    summary.empirical_cov = to_rows(&cov);

    let betas: Vec<&Vec<f64>> = ok.iter().map(|r| &r.beta_hat).collect();
    let mut push = |name: &str, covs: Vec<&Vec<f64>>| {
        summary
            .estimators
            .push(estimator_summary(name, &covs, &betas, &config.beta_true, p));
    };
    push("model_based", ok.iter().map(|r| &r.var_model).collect());
    push(
        "bernoulli_known",
        ok.iter().map(|r| &r.var_bernoulli).collect(),
    );
    push(
        "residual_regression",
        ok.iter().map(|r| &r.var_fp).collect(),
    );
    if ok.iter().all(|r| r.var_strat_second.is_some()) {
        push(
            "stratified_second_moment",
            ok.iter()
                .map(|r| r.var_strat_second.as_ref().unwrap())
                .collect(),
        );
        push(
            "stratified_variance",
            ok.iter()
                .map(|r| r.var_strat_variance.as_ref().unwrap())
                .collect(),
        );
    }
    summary
}

pub fn run_study(config: &ScenarioConfig) -> Result<StudyOutput> {
    run_study_with(config, Execution::default())
}

pub fn run_study_with(config: &ScenarioConfig, exec: Execution) -> Result<StudyOutput> {
    config.validate()?;
    let replicates = map_indexed(config.replicates, exec, |r| run_replicate(config, r))?;
    let summary = summarize(config, &replicates);
    Ok(StudyOutput {
        summary,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::config::{reference_scenario, SamplingSpec};

    fn small() -> ScenarioConfig {
        let mut c = reference_scenario();
        c.n_subjects = 300;
        c.replicates = 6;
        c
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the splitmix64 generator seeded at 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn replicate_is_reproducible_in_isolation() {
        let c = small();
        let out = run_study_with(&c, Execution::Sequential).unwrap();
        let third = run_replicate(&c, 3);
        assert_eq!(out.replicates[3], third);
        assert!(out
            .replicates
            .iter()
            .enumerate()
            .all(|(i, r)| r.replicate == i));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = small();
        let seq = run_study_with(&c, Execution::Sequential).unwrap();
        let par = run_study_with(&c, Execution::Parallel { threads: Some(3) }).unwrap();
        assert_eq!(seq, par);
        assert_eq!(
            serde_json::to_string(&seq.summary).unwrap(),
            serde_json::to_string(&par.summary).unwrap()
        );
    }

    #[test]
    fn full_sampling_reproduces_cohort_fit() {
        let mut c = small();
        c.sampling = SamplingSpec::FixedFraction {
            probs: [(1, 1.0), (2, 1.0), (3, 1.0)].into_iter().collect(),
        };
        let out = run_study_with(&c, Execution::Sequential).unwrap();
        for rep in &out.replicates {
            assert!(rep.converged, "{:?}", rep.error);
            let mut rng = replicate_rng(c.master_seed, rep.replicate as u64);
            let (_, full) = generate_cohort(&c, &mut rng).unwrap();
            let mle = fit_wl_cox(&full, &SolverOptions::default()).unwrap();
            assert!((rep.beta_hat[0] - mle.beta_hat[0]).abs() < 1e-12);
            assert!((rep.se_bernoulli[0] - rep.se_model[0]).abs() <= 1e-12 * rep.se_model[0]);
        }
    }

    #[test]
    fn failures_are_recorded() {
        let mut c = small();
        c.n_subjects = 2;
        c.replicates = 20;
        let out = run_study_with(&c, Execution::Sequential).unwrap();
        assert_eq!(out.replicates.len(), 20);
        assert!(out.summary.failure_rate > 0.0);
        assert!(!out.summary.valid_for_acceptance);
        let failed = out.replicates.iter().find(|r| !r.converged).unwrap();
        assert!(failed.error.is_some());
        assert!(failed.beta_hat.is_empty());
    }
}

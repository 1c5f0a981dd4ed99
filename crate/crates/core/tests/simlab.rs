use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use wlcox_core::simlab::{
    draw_subject, reference_scenario, run_study_with, Baseline, Censoring, CensoringDist,
    CovariateGen, Execution, ScenarioConfig,
};

fn single_covariate(beta: f64, censoring: Censoring) -> ScenarioConfig {
    let mut c = reference_scenario();
    c.beta_true = vec![beta];
    c.baseline = Baseline::Exponential { rate: 1.0 };
    c.censoring = censoring;
    c.covariates = vec![CovariateGen::Bernoulli { p: 0.5 }];
    c
}

/// One-sample Kolmogorov–Smirnov statistic against the unit exponential.
fn ks_exponential(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn null_model_times_are_unit_exponential() {
    let c = single_covariate(
        0.0,
        Censoring {
            tau: None,
            random: None,
        },
    );
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let draws: Vec<_> = (0..10_000).map(|_| draw_subject(&c, &mut rng)).collect();
    assert!(draws.iter().all(|s| s.event));
    let d = ks_exponential(draws.iter().map(|s| s.time).collect());
    // asymptotic 1% point of the KS distribution
    assert!(d < 1.628 / 100.0, "KS statistic {d}");
}

#[test]
fn hazard_ratio_two_halves_the_mean_time() {
    let c = single_covariate(
        2.0_f64.ln(),
        Censoring {
            tau: None,
            random: None,
        },
    );
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..20_000 {
        let s = draw_subject(&c, &mut rng);
        if s.z[0] == 1.0 {
            s1 += s.time;
            n1 += 1.0;
        } else {
            s0 += s.time;
            n0 += 1.0;
        }
    }
    let ratio = (s1 / n1) / (s0 / n0);
    // delta-method sd of a ratio of two exponential means, each with CV 1/√n
    let sd = 0.5 * (1.0 / n0 + 1.0 / n1).sqrt();
    assert!((ratio - 0.5).abs() < 3.0 * sd, "ratio {ratio}");
}

#[test]
fn competing_exponentials_give_half_events() {
    let c = single_covariate(
        0.0,
        Censoring {
            tau: None,
            random: Some(CensoringDist::Exponential { rate: 1.0 }),
        },
    );
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let n = 10_000;
    let events = (0..n).filter(|_| draw_subject(&c, &mut rng).event).count() as f64;
    let sigma = (0.25 / n as f64).sqrt();
    assert!((events / n as f64 - 0.5).abs() < 3.0 * sigma);
}

#[test]
fn same_seed_gives_identical_summary() {
    let mut c = reference_scenario();
    c.n_subjects = 400;
    c.replicates = 12;
    let a = run_study_with(&c, Execution::default()).unwrap();
    let b = run_study_with(&c, Execution::Parallel { threads: Some(2) }).unwrap();
    let s = run_study_with(&c, Execution::Sequential).unwrap();
    let ja = serde_json::to_string(&a.summary).unwrap();
    assert_eq!(ja, serde_json::to_string(&b.summary).unwrap());
    assert_eq!(ja, serde_json::to_string(&s.summary).unwrap());
    c.master_seed += 1;
    let other = run_study_with(&c, Execution::Sequential).unwrap();
    assert_ne!(ja, serde_json::to_string(&other.summary).unwrap());
}

#[test]
fn stratified_designs_order_bernoulli_above_finite_population() {
    let mut c = reference_scenario();
    c.n_subjects = 1000;
    c.replicates = 40;
    let out = run_study_with(&c, Execution::default()).unwrap();
    let s = &out.summary;
    let bern = s.estimator("bernoulli_known").unwrap();
    let fp = s.estimator("residual_regression").unwrap();
    assert!(bern.mean_cov[0][0] >= fp.mean_cov[0][0]);
    let mean_se = |f: fn(&wlcox_core::simlab::ReplicateResult) -> f64| {
        out.replicates
            .iter()
            .filter(|r| r.converged)
            .map(f)
            .sum::<f64>()
            / s.converged as f64
    };
    assert!(mean_se(|r| r.se_bernoulli[0]) >= mean_se(|r| r.se_fp[0]));
}

#[test]
fn scenario_file_parses() {
    let text = r#"{
        "n_subjects": 500,
        "beta_true": [0.5, -0.25],
        "baseline": {"kind": "weibull", "shape": 1.5, "scale": 2.0},
        "censoring": {"tau": 3.0, "random": {"kind": "uniform", "lower": 0.0, "upper": 6.0}},
        "covariates": [{"kind": "normal", "mean": 0.0, "sd": 1.0}, {"kind": "uniform", "lower": 0.0, "upper": 1.0}],
        "aux": [{"kind": "noisy", "source": 0, "sd": 0.5}],
        "strata_rule": {"aux_column": 0, "cutpoints": [0.0], "case_cohort": true},
        "design": {"mode": "estimated_logistic", "logistic_formula": {"aux_columns": [0]}},
        "sampling": {"kind": "logistic", "alpha": [-1.0, 0.5]},
        "replicates": 3,
        "master_seed": 42
    }"#;
    let c: ScenarioConfig = serde_json::from_str(text).unwrap();
    c.validate().unwrap();
    let out = run_study_with(&c, Execution::Sequential).unwrap();
    assert_eq!(out.replicates.len(), 3);
    assert!(
        out.replicates.iter().all(|r| r.converged),
        "{:?}",
        out.replicates
    );
}

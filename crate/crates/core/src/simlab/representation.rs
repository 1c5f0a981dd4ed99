//! Two ways of producing a stratified phase-one sample: i.i.d. draws then
//! classification, or multinomial stratum sizes then independent draws from
//! each stratum's conditional law. Both should give the same distribution;
//! this module compares them with two-sample tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::generate::{draw_subject, generate_by_strata, Subject};
use super::study::child_seed;
use crate::error::{Result, WlError};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Upper 1% points of χ² with 1..=12 degrees of freedom.
const CHI2_99: [f64; 12] = [
    6.634_897, 9.210_340, 11.344_867, 13.276_704, 15.086_272, 16.811_894, 18.475_307, 20.090_235,
    21.665_994, 23.209_251, 24.724_970, 26.216_967,
];

/// Upper 1% point of χ²_df; Wilson–Hilferty beyond the table.
pub fn chi_square_critical_1pct(df: usize) -> f64 {
    if df == 0 {
        return 0.0;
    }
    if df <= CHI2_99.len() {
        return CHI2_99[df - 1];
    }
    let k = df as f64;
    let z = 2.326_347_874;
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

/// Pearson χ² for a 2 × J table of counts. Empty columns are dropped.
pub fn homogeneity_chi_square(a: &[usize], b: &[usize]) -> (f64, usize) {
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    let n = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cols = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cols += 1;
        for (obs, row) in [(x, na), (y, nb)] {
            let e = row as f64 * col / n;
            stat += (obs as f64 - e).powi(2) / e;
        }
    }
    (stat, cols.saturating_sub(1))
}

fn mean_var(xs: &[f64], shift: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x - shift).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - shift - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch two-sample z statistic. `None` with fewer than two values per side
/// or when both samples are the same constant.
pub fn welch_z(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    // shifting by a common value keeps constant samples exactly constant
    let shift = a[0];
    let (ma, va) = mean_var(a, shift);
    let (mb, vb) = mean_var(b, shift);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    if se > 0.0 {
        Some((ma - mb) / se)
    } else if ma == mb {
        None
    } else {
        Some(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub name: String,
    pub statistic: f64,
    pub df: usize,
    pub critical_1pct: f64,
    pub passed: bool,
}

impl ChiSquareTest {
    fn new(name: impl Into<String>, statistic: f64, df: usize) -> Self {
        let critical_1pct = chi_square_critical_1pct(df);
        Self {
            name: name.into(),
            statistic,
            df,
            critical_1pct,
            passed: statistic <= critical_1pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub n_draws: usize,
    pub pilot_size: usize,
    pub strata: Vec<u32>,
    pub counts_iid: Vec<usize>,
    pub counts_stratified: Vec<usize>,
    /// Stratum counts, then one omnibus test per covariate and one for
    /// follow-up time (sum over strata of squared Welch statistics).
    pub tests: Vec<ChiSquareTest>,
    pub passed: bool,
}

fn by_stratum(subjects: &[Subject], strata: &[u32]) -> Vec<Vec<usize>> {
    strata
        .iter()
        .map(|j| {
            (0..subjects.len())
                .filter(|&i| subjects[i].stratum == *j)
                .collect()
        })
        .collect()
}

/// Runs both generation paths with `n_draws` subjects each. Stratum
/// probabilities for the multinomial stage come from an independent pilot
/// of `pilot_size` i.i.d. draws.
pub fn representation_check(
    config: &ScenarioConfig,
    n_draws: usize,
    pilot_size: usize,
    seed: u64,
) -> Result<RepresentationReport> {
    config.validate()?;
    if n_draws < 2 || pilot_size == 0 {
        return Err(WlError::InvalidInput(
            "need at least two draws and a nonempty pilot".into(),
        ));
    }
    let mut pilot_rng = ChaCha12Rng::seed_from_u64(child_seed(seed, 0));
    let mut iid_rng = ChaCha12Rng::seed_from_u64(child_seed(seed, 1));
    let mut strat_rng = ChaCha12Rng::seed_from_u64(child_seed(seed, 2));

    let mut pilot: BTreeMap<u32, usize> = BTreeMap::new();
    for _ in 0..pilot_size {
        *pilot
            .entry(draw_subject(config, &mut pilot_rng).stratum)
            .or_default() += 1;
    }
    let probs: Vec<(u32, f64)> = pilot
        .iter()
        .map(|(&j, &c)| (j, c as f64 / pilot_size as f64))
        .collect();

    let iid: Vec<Subject> = (0..n_draws)
        .map(|_| draw_subject(config, &mut iid_rng))
        .collect();
    let strat = generate_by_strata(config, &probs, n_draws, &mut strat_rng)?;

    let mut strata: Vec<u32> = config.possible_strata();
    for s in iid.iter().chain(&strat) {
        if !strata.contains(&s.stratum) {
            strata.push(s.stratum);
        }
    }
    strata.sort_unstable();
    let groups_a = by_stratum(&iid, &strata);
    let groups_b = by_stratum(&strat, &strata);
    let counts_iid: Vec<usize> = groups_a.iter().map(Vec::len).collect();
    let counts_stratified: Vec<usize> = groups_b.iter().map(Vec::len).collect();

    let mut tests = Vec::new();
    let (stat, df) = homogeneity_chi_square(&counts_iid, &counts_stratified);
    tests.push(ChiSquareTest::new("stratum_counts", stat, df));

    let p = config.p();
    let extract: Vec<(String, Box<dyn Fn(&Subject) -> f64>)> = (0..p)
        .map(|k| {
            (
                format!("z{k}_mean"),
                Box::new(move |s: &Subject| s.z[k]) as Box<dyn Fn(&Subject) -> f64>,
            )
        })
        .chain(std::iter::once((
            "time_mean".to_string(),
            Box::new(|s: &Subject| s.time) as Box<dyn Fn(&Subject) -> f64>,
        )))
        .collect();
    for (name, f) in &extract {
        let mut stat = 0.0;
        let mut df = 0;
        for (ga, gb) in groups_a.iter().zip(&groups_b) {
            let xa: Vec<f64> = ga.iter().map(|&i| f(&iid[i])).collect();
            let xb: Vec<f64> = gb.iter().map(|&i| f(&strat[i])).collect();
            if let Some(z) = welch_z(&xa, &xb) {
                stat += z * z;
                df += 1;
            }
        }
        tests.push(ChiSquareTest::new(name.clone(), stat, df));
    }
    let passed = tests.iter().all(|t| t.passed);
    Ok(RepresentationReport {
        n_draws,
        pilot_size,
        strata,
        counts_iid,
        counts_stratified,
        tests,
        passed,
    })
}

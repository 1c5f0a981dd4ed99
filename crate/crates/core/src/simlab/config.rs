use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{DesignMode, LogisticFormula, PhaseTwoTarget, SamplingDesign};
use crate::error::{Result, WlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    /// `Λ₀(t) = rate · t`.
    Exponential { rate: f64 },
    /// `Λ₀(t) = (t / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    /// Inverse cumulative hazard.
    pub fn inverse_cumulative(&self, h: f64) -> f64 {
        match *self {
            Baseline::Exponential { rate } => h / rate,
            Baseline::Weibull { shape, scale } => scale * h.powf(1.0 / shape),
        }
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            Baseline::Exponential { rate } => rate * t,
            Baseline::Weibull { shape, scale } => (t / scale).powf(shape),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CensoringDist {
    Exponential { rate: f64 },
    Uniform { lower: f64, upper: f64 },
}

/// Random censoring (optional) followed by administrative censoring at `tau`.
/// Subjects still at risk at `tau` are censored there, so `Pr(C = τ) > 0`.
/// `tau: None` means no administrative cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Censoring {
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub random: Option<CensoringDist>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateGen {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lower: f64, upper: f64 },
}

/// Phase-one auxiliary variable derived from a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AuxGen {
    /// Binary covariate observed with symmetric misclassification.
    Misclassified { source: usize, flip_prob: f64 },
    /// Covariate plus Gaussian noise.
    Noisy { source: usize, sd: f64 },
    /// Number of cutpoints not exceeding the covariate.
    Coarsened { source: usize, cutpoints: Vec<f64> },
}

impl AuxGen {
    fn source(&self) -> usize {
        match self {
            AuxGen::Misclassified { source, .. }
            | AuxGen::Noisy { source, .. }
            | AuxGen::Coarsened { source, .. } => *source,
        }
    }
}

/// Maps `(Δ, aux)` to a stratum label.
///
/// The aux value `aux[aux_column]` is binned by `cutpoints` into `0..=K`.
/// With `labels`, the stratum is `labels[Δ][bin]` (`labels[0][bin]` when
/// `by_event` is false); otherwise strata are numbered from 1. `case_cohort`
/// sends every failure to the always-sampled stratum 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataRule {
    #[serde(default)]
    pub aux_column: Option<usize>,
    #[serde(default)]
    pub cutpoints: Vec<f64>,
    #[serde(default = "yes")]
    pub by_event: bool,
    #[serde(default)]
    pub case_cohort: bool,
    #[serde(default)]
    pub labels: Option<Vec<Vec<u32>>>,
}

fn yes() -> bool {
    true
}

impl StrataRule {
    pub fn n_bins(&self) -> usize {
        self.cutpoints.len() + 1
    }

    pub fn classify(&self, event: bool, aux: &[f64]) -> u32 {
        if self.case_cohort && event {
            return 0;
        }
        let bin = match self.aux_column {
            Some(c) => self.cutpoints.iter().filter(|&&cp| cp <= aux[c]).count(),
            None => 0,
        };
        let row = usize::from(event && self.by_event);
        match &self.labels {
            Some(l) => l[row][bin],
            None => 1 + (row * self.n_bins() + bin) as u32,
        }
    }
}

/// Phase-two sampling mechanism used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingSpec {
    /// Independent inclusion with per-stratum probability.
    Bernoulli {
        #[serde(deserialize_with = "crate::design::stratum_keys")]
        probs: BTreeMap<u32, f64>,
    },
    /// Exactly `round(p_j N_j)` without replacement in each stratum.
    FixedFraction {
        #[serde(deserialize_with = "crate::design::stratum_keys")]
        probs: BTreeMap<u32, f64>,
    },
    /// Independent inclusion with `logistic(xᵀα)`, x built from the design's logistic formula.
    Logistic { alpha: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub beta_true: Vec<f64>,
    pub baseline: Baseline,
    pub censoring: Censoring,
    pub covariates: Vec<CovariateGen>,
    #[serde(default)]
    pub aux: Vec<AuxGen>,
    pub strata_rule: StrataRule,
    pub design: SamplingDesign,
    pub sampling: SamplingSpec,
    pub replicates: usize,
    pub master_seed: u64,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(WlError::config(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn probability(path: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(WlError::config(
            path,
            format!("must lie in [0, 1], got {v}"),
        ))
    }
}

impl ScenarioConfig {
    pub fn p(&self) -> usize {
        self.beta_true.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(WlError::config(
                "n_subjects",
                "at least 2 subjects are required",
            ));
        }
        if self.replicates == 0 {
            return Err(WlError::config("replicates", "must be at least 1"));
        }
        if self.beta_true.is_empty() || self.beta_true.len() != self.covariates.len() {
            return Err(WlError::config(
                "beta_true",
                format!(
                    "{} coefficients for {} covariates",
                    self.beta_true.len(),
                    self.covariates.len()
                ),
            ));
        }
        for (k, b) in self.beta_true.iter().enumerate() {
            if !b.is_finite() {
                return Err(WlError::config(format!("beta_true[{k}]"), "must be finite"));
            }
        }
        match self.baseline {
            Baseline::Exponential { rate } => positive("baseline.rate", rate)?,
            Baseline::Weibull { shape, scale } => {
                positive("baseline.shape", shape)?;
                positive("baseline.scale", scale)?;
            }
        }
        // τ > 0 is what makes expected events nonzero; P(T ≥ τ) > 0 holds for any finite hazard
        if let Some(tau) = self.censoring.tau {
            positive("censoring.tau", tau)?;
        }
        match &self.censoring.random {
            None => {}
            Some(CensoringDist::Exponential { rate }) => positive("censoring.random.rate", *rate)?,
            Some(CensoringDist::Uniform { lower, upper }) => {
                if !(*lower >= 0.0 && upper > lower) {
                    return Err(WlError::config(
                        "censoring.random",
                        "uniform needs 0 <= lower < upper",
                    ));
                }
                if self.censoring.tau.is_some_and(|tau| *upper < tau) {
                    return Err(WlError::config(
                        "censoring.random.upper",
                        "everyone is censored before tau, so nobody is at risk at tau",
                    ));
                }
            }
        }
        for (k, g) in self.covariates.iter().enumerate() {
            let path = format!("covariates[{k}]");
            match *g {
                CovariateGen::Bernoulli { p } => probability(&format!("{path}.p"), p)?,
                CovariateGen::Normal { sd, .. } => positive(&format!("{path}.sd"), sd)?,
                CovariateGen::Uniform { lower, upper } => {
                    if !(upper > lower) {
                        return Err(WlError::config(path, "uniform needs lower < upper"));
                    }
                }
            }
        }
        for (k, a) in self.aux.iter().enumerate() {
            let path = format!("aux[{k}]");
            if a.source() >= self.covariates.len() {
                return Err(WlError::config(
                    format!("{path}.source"),
                    "no such covariate",
                ));
            }
            match a {
                AuxGen::Misclassified { flip_prob, .. } => {
                    probability(&format!("{path}.flip_prob"), *flip_prob)?
                }
                AuxGen::Noisy { sd, .. } => {
                    if !(*sd >= 0.0) {
                        return Err(WlError::config(format!("{path}.sd"), "must be nonnegative"));
                    }
                }
                AuxGen::Coarsened { .. } => {}
            }
        }
        let rule = &self.strata_rule;
        if let Some(c) = rule.aux_column {
            if c >= self.aux.len() {
                return Err(WlError::config(
                    "strata_rule.aux_column",
                    "no such aux variable",
                ));
            }
        }
        if let Some(labels) = &rule.labels {
            let rows = if rule.by_event { 2 } else { 1 };
            if labels.len() != rows || labels.iter().any(|r| r.len() != rule.n_bins()) {
                return Err(WlError::config(
                    "strata_rule.labels",
                    format!("expected {rows} rows of {} labels", rule.n_bins()),
                ));
            }
        }
        self.design.validate().map_err(|e| match e {
            WlError::Config { path, reason } => WlError::config(format!("design.{path}"), reason),
            other => other,
        })?;
        match &self.sampling {
            SamplingSpec::Bernoulli { probs } | SamplingSpec::FixedFraction { probs } => {
                for (j, p) in probs {
                    probability(&format!("sampling.probs.{j}"), *p)?;
                }
                for j in self.possible_strata() {
                    if !self.design.is_always_sampled(j) && !probs.contains_key(&j) {
                        return Err(WlError::config(
                            format!("sampling.probs.{j}"),
                            "missing probability for stratum",
                        ));
                    }
                }
            }
            SamplingSpec::Logistic { alpha } => {
                let f = self.design.logistic_formula.as_ref().ok_or_else(|| {
                    WlError::config("design.logistic_formula", "required for logistic sampling")
                })?;
                let q = usize::from(f.intercept) + f.aux_columns.len();
                if alpha.len() != q {
                    return Err(WlError::config(
                        "sampling.alpha",
                        format!("expected {q} coefficients"),
                    ));
                }
                if f.aux_columns.iter().any(|&c| c >= self.aux.len()) {
                    return Err(WlError::config(
                        "design.logistic_formula.aux_columns",
                        "no such aux variable",
                    ));
                }
            }
        }
        if self.design.mode == DesignMode::BernoulliKnown
            && !matches!(self.sampling, SamplingSpec::Bernoulli { .. })
        {
            return Err(WlError::config(
                "sampling",
                "bernoulli_known analysis requires Bernoulli sampling",
            ));
        }
        Ok(())
    }

    /// Every stratum label the rule can produce.
    pub fn possible_strata(&self) -> Vec<u32> {
        let rule = &self.strata_rule;
        let mut out = Vec::new();
        for event in [false, true] {
            for bin in 0..rule.n_bins() {
                let label = if rule.case_cohort && event {
                    0
                } else {
                    let row = usize::from(event && rule.by_event);
                    match &rule.labels {
                        Some(l) => l[row][bin],
                        None => 1 + (row * rule.n_bins() + bin) as u32,
                    }
                };
                if !out.contains(&label) {
                    out.push(label);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Concrete phase-two target for a cohort whose stratum sizes are `totals`.
    pub fn phase_two_target(&self, totals: &BTreeMap<u32, usize>) -> PhaseTwoTarget {
        match &self.sampling {
            SamplingSpec::Bernoulli { probs } => PhaseTwoTarget::Bernoulli {
                probs: probs.clone(),
            },
            SamplingSpec::FixedFraction { probs } => PhaseTwoTarget::FixedSize {
                sizes: totals
                    .iter()
                    .filter(|(j, _)| !self.design.is_always_sampled(**j))
                    .map(|(&j, &n)| (j, (probs[&j] * n as f64).round() as usize))
                    .collect(),
            },
            SamplingSpec::Logistic { alpha } => PhaseTwoTarget::Logistic {
                alpha: alpha.clone(),
                formula: self
                    .design
                    .logistic_formula
                    .clone()
                    .unwrap_or(LogisticFormula {
                        intercept: true,
                        aux_columns: vec![],
                    }),
            },
        }
    }
}

/// Reference scenario: N = 2000, one binary covariate, β₀ = log 2, unit
/// exponential baseline with administrative censoring at τ giving about 30%
/// events, and four strata on (Δ, misclassified Z) sampled at
/// {1.0, 0.25, 0.25, 0.5} without replacement.
pub fn reference_scenario() -> ScenarioConfig {
    // 1 - (e^{-τ} + e^{-2τ})/2 = 0.3
    let x = (-1.0 + 6.6_f64.sqrt()) / 2.0;
    let tau = -x.ln();
    let mut design = SamplingDesign::new(DesignMode::FinitePopulation);
    design.always_sampled_strata = vec![0];
    ScenarioConfig {
        n_subjects: 2000,
        beta_true: vec![2.0_f64.ln()],
        baseline: Baseline::Exponential { rate: 1.0 },
        censoring: Censoring {
            tau: Some(tau),
            random: None,
        },
        covariates: vec![CovariateGen::Bernoulli { p: 0.5 }],
        aux: vec![AuxGen::Misclassified {
            source: 0,
            flip_prob: 0.1,
        }],
        strata_rule: StrataRule {
            aux_column: Some(0),
            cutpoints: vec![0.5],
            by_event: true,
            case_cohort: false,
            // [Δ][aux bin]: exposed-looking cases always sampled
            labels: Some(vec![vec![1, 2], vec![3, 0]]),
        },
        design,
        sampling: SamplingSpec::FixedFraction {
            probs: [(1, 0.25), (2, 0.25), (3, 0.5)].into_iter().collect(),
        },
        replicates: 1000,
        master_seed: 20_070_101,
    }
}

/// The reference scenario under independent Bernoulli sampling analysed with
/// estimated stratum fractions.
pub fn reference_scenario_estimated() -> ScenarioConfig {
    let mut c = reference_scenario();
    c.design.mode = DesignMode::EstimatedStratified;
    c.sampling = SamplingSpec::Bernoulli {
        probs: [(1, 0.25), (2, 0.25), (3, 0.5)].into_iter().collect(),
    };
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_validates_and_targets_30_percent_events() {
        let c = reference_scenario();
        c.validate().unwrap();
        let tau = c.censoring.tau.unwrap();
        let p_event = 1.0 - 0.5 * ((-tau).exp() + (-2.0 * tau).exp());
        assert!((p_event - 0.3).abs() < 1e-12);
        assert_eq!(c.possible_strata(), vec![0, 1, 2, 3]);
        reference_scenario_estimated().validate().unwrap();
    }

    #[test]
    fn strata_rule_numbering() {
        let rule = StrataRule {
            aux_column: Some(0),
            cutpoints: vec![0.0, 1.0],
            by_event: true,
            case_cohort: false,
            labels: None,
        };
        assert_eq!(rule.classify(false, &[-1.0]), 1);
        assert_eq!(rule.classify(false, &[0.5]), 2);
        assert_eq!(rule.classify(true, &[2.0]), 6);
        let cc = StrataRule {
            case_cohort: true,
            ..rule
        };
        assert_eq!(cc.classify(true, &[2.0]), 0);
    }

    #[test]
    fn bad_config_reports_path() {
        let mut c = reference_scenario();
        c.censoring.tau = Some(0.0);
        match c.validate() {
            Err(WlError::Config { path, .. }) => assert_eq!(path, "censoring.tau"),
            other => panic!("{other:?}"),
        }
        let mut c = reference_scenario();
        c.sampling = SamplingSpec::FixedFraction {
            probs: [(1, 0.25)].into_iter().collect(),
        };
        match c.validate() {
            Err(WlError::Config { path, .. }) => assert_eq!(path, "sampling.probs.2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let c = reference_scenario();
        let s = serde_json::to_string_pretty(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}

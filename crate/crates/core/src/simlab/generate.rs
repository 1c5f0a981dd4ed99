use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};

use super::config::{AuxGen, CensoringDist, CovariateGen, ScenarioConfig};
use crate::design::PhaseOneRecord;
use crate::error::{Result, WlError};
use crate::survival::CohortData;

/// One simulated phase-one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub z: Vec<f64>,
    pub time: f64,
    pub event: bool,
    pub aux: Vec<f64>,
    pub stratum: u32,
}

fn draw_covariate<R: Rng + ?Sized>(g: &CovariateGen, rng: &mut R) -> f64 {
    match *g {
        CovariateGen::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
        CovariateGen::Normal { mean, sd } => {
            let e: f64 = StandardNormal.sample(rng);
            mean + sd * e
        }
        CovariateGen::Uniform { lower, upper } => rng.random_range(lower..upper),
    }
}

/// Draws `W = (Z, T̃, C, Ṽ)` and reduces it to the observed data. The config
/// is assumed valid.
pub fn draw_subject<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Subject {
    let z: Vec<f64> = config
        .covariates
        .iter()
        .map(|g| draw_covariate(g, rng))
        .collect();
    let eta: f64 = z.iter().zip(&config.beta_true).map(|(a, b)| a * b).sum();
    let e: f64 = Exp1.sample(rng);
    let latent = config.baseline.inverse_cumulative(e / eta.exp());

    let mut censor = match &config.censoring.random {
        None => f64::INFINITY,
        Some(CensoringDist::Exponential { rate }) => {
            Exp::new(*rate).expect("validated rate").sample(rng)
        }
        Some(CensoringDist::Uniform { lower, upper }) => rng.random_range(*lower..*upper),
    };
    if let Some(tau) = config.censoring.tau {
        censor = censor.min(tau);
    }
    let event = latent <= censor;
    let time = latent.min(censor);

    let aux: Vec<f64> = config
        .aux
        .iter()
        .map(|a| match a {
            AuxGen::Misclassified { source, flip_prob } => {
                let v = z[*source];
                if rng.random_bool(*flip_prob) {
                    1.0 - v
                } else {
                    v
                }
            }
            AuxGen::Noisy { source, sd } => {
                let e: f64 = StandardNormal.sample(rng);
                z[*source] + sd * e
            }
            AuxGen::Coarsened { source, cutpoints } => {
                cutpoints.iter().filter(|&&c| c <= z[*source]).count() as f64
            }
        })
        .collect();
    let stratum = config.strata_rule.classify(event, &aux);
    Subject {
        z,
        time,
        event,
        aux,
        stratum,
    }
}

/// Assembles phase-one records (all marked sampled) and the unweighted
/// full-cohort data from a list of subjects.
pub fn assemble(subjects: &[Subject], p: usize) -> Result<(Vec<PhaseOneRecord>, CohortData)> {
    let n = subjects.len();
    let records = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| PhaseOneRecord {
            subject_id: i.to_string(),
            stratum: s.stratum,
            aux: s.aux.clone(),
            sampled: true,
            known_pi: None,
        })
        .collect();
    let z = DMatrix::from_fn(n, p, |i, k| subjects[i].z[k]);
    let full = CohortData::unweighted(
        subjects.iter().map(|s| s.time).collect(),
        subjects.iter().map(|s| s.event).collect(),
        z,
    )?;
    Ok((records, full))
}

/// I.i.d. cohort of `config.n_subjects` subjects, classified into strata.
pub fn generate_cohort<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<(Vec<PhaseOneRecord>, CohortData)> {
    config.validate()?;
    let subjects: Vec<Subject> = (0..config.n_subjects)
        .map(|_| draw_subject(config, rng))
        .collect();
    assemble(&subjects, config.p())
}

/// Draw from the conditional law of W given stratum `stratum`, by rejection.
pub fn draw_in_stratum<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    stratum: u32,
    max_tries: usize,
    rng: &mut R,
) -> Result<Subject> {
    for _ in 0..max_tries {
        let s = draw_subject(config, rng);
        if s.stratum == stratum {
            return Ok(s);
        }
    }
    Err(WlError::Stratum {
        stratum,
        reason: format!("no member drawn in {max_tries} attempts"),
    })
}

/// Multinomial stratum sizes followed by independent within-stratum draws.
/// `probs` pairs each stratum with its probability; the result is ordered
/// by stratum, which leaves the i.i.d. law unchanged up to a permutation.
pub fn generate_by_strata<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    probs: &[(u32, f64)],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Subject>> {
    let mut remaining = n as u64;
    let mut mass_left = 1.0_f64;
    let mut out = Vec::with_capacity(n);
    for (k, &(stratum, p)) in probs.iter().enumerate() {
        // sequential binomials give a multinomial draw
        let m = if k + 1 == probs.len() {
            remaining
        } else if mass_left <= 0.0 || remaining == 0 {
            0
        } else {
            let q = (p / mass_left).clamp(0.0, 1.0);
            rand_distr::Binomial::new(remaining, q)
                .map_err(|e| WlError::InvalidInput(e.to_string()))?
                .sample(rng)
        };
        remaining -= m;
        mass_left -= p;
        for _ in 0..m {
            out.push(draw_in_stratum(config, stratum, 1_000_000, rng)?);
        }
    }
    Ok(out)
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use wlcox_core::design::{compute_weights, PhaseOneRecord};
use wlcox_core::{
    breslow_hazard, efficient_score_contributions, fit_wl_cox, partial_information, partial_score,
    CohortData, DesignMode, SamplingDesign, SolverOptions, WlError,
};

#[derive(Debug, Clone)]
struct Fixture {
    times: Vec<f64>,
    status: Vec<bool>,
    z: Vec<f64>,
    w: Vec<f64>,
    p: usize,
}

impl Fixture {
    fn n(&self) -> usize {
        self.times.len()
    }

    fn data(&self) -> CohortData {
        CohortData::new(
            self.times.clone(),
            self.status.clone(),
            DMatrix::from_row_slice(self.n(), self.p, &self.z),
            self.w.clone(),
        )
        .unwrap()
    }
}

/// Small cohorts with heavy ties, some zero weights, and subject 0 a weighted event.
fn fixture() -> impl Strategy<Value = Fixture> {
    (6usize..40, 1usize..=3).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(1u8..8, n),
            prop::collection::vec(prop::bool::weighted(0.6), n),
            prop::collection::vec(-2.0f64..2.0, n * p),
            prop::collection::vec(prop_oneof![Just(0.0), 0.5f64..3.0], n),
        )
            .prop_map(move |(t, mut d, z, mut w)| {
                d[0] = true;
                w[0] = 1.0;
                Fixture {
                    times: t.into_iter().map(f64::from).collect(),
                    status: d,
                    z,
                    w,
                    p,
                }
            })
    })
}

/// Score and information straight from the Breslow-ties definition, O(N²).
fn naive_score_info(f: &Fixture, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = f.n();
    let p = f.p;
    let zi = |i: usize| DVector::from_row_slice(&f.z[i * p..(i + 1) * p]);
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        if !f.status[i] || f.w[i] == 0.0 {
            continue;
        }
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for j in (0..n).filter(|&j| f.times[j] >= f.times[i]) {
            let r = f.w[j] * zi(j).dot(beta).exp();
            s0 += r;
            s1 += zi(j) * r;
            s2 += zi(j) * zi(j).transpose() * r;
        }
        let m = &s1 / s0;
        score += (zi(i) - &m) * f.w[i];
        info += (s2 / s0 - &m * m.transpose()) * f.w[i];
    }
    (score / n as f64, info / n as f64)
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + b.amax())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_matches_quadratic_definition(f in fixture(), b in prop::collection::vec(-1.0f64..1.0, 3)) {
        let beta = DVector::from_row_slice(&b[..f.p]);
        let d = f.data();
        let (s, i) = naive_score_info(&f, &beta);
        let s_fast = partial_score(&d, &beta).unwrap();
        let i_fast = partial_information(&d, &beta).unwrap();
        prop_assert!((&s_fast - &s).amax() <= 1e-11 * (1.0 + s.amax()));
        prop_assert!(close(&i_fast, &i, 1e-11));
    }

    #[test]
    fn information_is_psd(f in fixture(), b in prop::collection::vec(-1.0f64..1.0, 3)) {
        let beta = DVector::from_row_slice(&b[..f.p]);
        let info = partial_information(&f.data(), &beta).unwrap();
        let min = info.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-12 * (1.0 + info.amax()));
    }

    #[test]
    fn permuting_subjects_changes_nothing(f in fixture(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut order: Vec<usize> = (0..f.n()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let g = Fixture {
            times: order.iter().map(|&i| f.times[i]).collect(),
            status: order.iter().map(|&i| f.status[i]).collect(),
            z: order.iter().flat_map(|&i| f.z[i * f.p..(i + 1) * f.p].to_vec()).collect(),
            w: order.iter().map(|&i| f.w[i]).collect(),
            p: f.p,
        };
        let beta = DVector::from_element(f.p, 0.3);
        let a = partial_score(&f.data(), &beta).unwrap();
        let b = partial_score(&g.data(), &beta).unwrap();
        prop_assert!((&a - &b).amax() <= 1e-12 * (1.0 + a.amax()));
        let ha = breslow_hazard(&f.data(), &beta).unwrap();
        let hb = breslow_hazard(&g.data(), &beta).unwrap();
        prop_assert_eq!(&ha.jump_times, &hb.jump_times);
        for (x, y) in ha.jumps.iter().zip(&hb.jumps) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn rescaling_weights_keeps_the_root(f in fixture(), c in 0.1f64..10.0) {
        let d = f.data();
        let Ok(fit) = fit_wl_cox(&d, &SolverOptions::default()) else {
            return Ok(());
        };
        let scaled = d.with_weights(f.w.iter().map(|w| w * c).collect()).unwrap();
        let fit2 = fit_wl_cox(&scaled, &SolverOptions::default()).unwrap();
        prop_assert!((&fit.beta_hat - &fit2.beta_hat).amax() <= 1e-7 * (1.0 + fit.beta_hat.amax()));
        // the Breslow estimator is also scale free
        for (a, b) in fit.hazard.jumps.iter().zip(&fit2.hazard.jumps) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn affine_covariate_changes(f in fixture(), shift in -3.0f64..3.0, scale in 0.3f64..4.0) {
        let d = f.data();
        let Ok(fit) = fit_wl_cox(&d, &SolverOptions::default()) else {
            return Ok(());
        };
        let g = Fixture { z: f.z.iter().map(|z| scale * z + shift).collect(), ..f.clone() };
        let fit2 = fit_wl_cox(&g.data(), &SolverOptions::default()).unwrap();
        let expect = &fit.beta_hat / scale;
        prop_assert!((&fit2.beta_hat - &expect).amax() <= 1e-6 * (1.0 + expect.amax()));
    }

    #[test]
    fn fit_is_self_consistent(f in fixture()) {
        let d = f.data();
        let Ok(fit) = fit_wl_cox(&d, &SolverOptions::default()) else {
            return Ok(());
        };
        let s = partial_score(&d, &fit.beta_hat).unwrap();
        prop_assert!(s.amax() <= 1e-9);
        // efficient-score rows recomputed from the public hazard agree with the fit
        let rows = efficient_score_contributions(&d, &fit.beta_hat, &fit.hazard).unwrap();
        prop_assert!(close(&rows, &fit.efficient_scores, 1e-9));
        // weighted rows average to the score, which is zero
        let n = f.n() as f64;
        let mean = fit.dfbeta.row_sum() / n;
        prop_assert!(mean.amax() <= 1e-8 * (1.0 + fit.influence.amax()));
        // hazard jumps are positive, one per distinct weighted event time
        prop_assert!(fit.hazard.jumps.iter().all(|&j| j > 0.0));
    }

    #[test]
    fn newton_converges_quadratically(f in fixture()) {
        let Ok(fit) = fit_wl_cox(&f.data(), &SolverOptions::default()) else {
            return Ok(());
        };
        let norms: Vec<f64> = fit.iterations.iter().map(|r| r.score_norm).collect();
        for w in norms.windows(2) {
            let (a, b) = (w[0], w[1]);
            // once inside the basin, the next residual is O(previous²)
            if a < 1e-2 && a > 1e-7 && fit.iterations.iter().all(|r| r.step_size == 1.0 || r.step_size == 0.0) {
                prop_assert!(b <= 1e3 * a * a + 1e-12, "norms {:?}", norms);
            }
        }
    }

    #[test]
    fn finite_population_weights_recover_stratum_sizes(
        cells in prop::collection::vec((1usize..40, 0.0f64..1.0), 1..6)
    ) {
        let mut records = Vec::new();
        let mut expected = Vec::new();
        for (j, &(n_total, frac)) in cells.iter().enumerate() {
            let n_sampled = ((n_total as f64 * frac).ceil() as usize).clamp(1, n_total);
            for k in 0..n_total {
                records.push(PhaseOneRecord {
                    subject_id: format!("{j}-{k}"),
                    stratum: j as u32 + 1,
                    aux: vec![],
                    sampled: k < n_sampled,
                    known_pi: None,
                });
            }
            expected.push((j as u32 + 1, n_total));
        }
        for mode in [DesignMode::FinitePopulation, DesignMode::EstimatedStratified] {
            let w = compute_weights(&records, &SamplingDesign::new(mode)).unwrap();
            let ipw = w.ipw_weights();
            for &(j, n_total) in &expected {
                let total: f64 = (0..records.len()).filter(|&i| records[i].stratum == j).map(|i| ipw[i]).sum();
                prop_assert!((total - n_total as f64).abs() <= 1e-9 * n_total as f64);
            }
        }
    }
}

#[test]
fn zero_weight_rows_do_not_matter() {
    let f = Fixture {
        times: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        status: vec![true, true, false, true, true],
        z: vec![0.1, 1.0, -0.5, 0.7, 0.2],
        w: vec![1.0, 2.0, 0.0, 1.0, 1.0],
        p: 1,
    };
    let mut g = f.clone();
    g.times[2] = 0.5;
    g.z[2] = 99.0;
    g.status[2] = true;
    let a = fit_wl_cox(&f.data(), &SolverOptions::default());
    let b = fit_wl_cox(&g.data(), &SolverOptions::default());
    match (a, b) {
        (Ok(a), Ok(b)) => assert_eq!(a.beta_hat, b.beta_hat),
        (Err(WlError::MonotoneLikelihood { .. }), Err(WlError::MonotoneLikelihood { .. })) => {}
        other => panic!("{other:?}"),
    }
}

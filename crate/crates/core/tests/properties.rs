use proptest::prelude::*;
use tvemi_core::basis::TveSpec;
use tvemi_core::cox::{fit, PartialLikelihood};
use tvemi_core::pool::rubin_pool;
use tvemi_core::surv::{nelson_aalen, CovariateKind, CovariateMeta, SurvivalDataset};
use tvemi_core::{DMatrix, DVector};

fn increasing_knots(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..2.0, 3..=max_len).prop_map(|gaps| {
        let mut acc = 0.0;
        gaps.iter()
            .map(|g| {
                acc += g;
                acc
            })
            .collect()
    })
}

/// Rows of (time, event, x1, x2).
fn subjects(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<(f64, bool, f64, f64)>> {
    prop::collection::vec((1u32..40, any::<bool>(), -2.0f64..2.0, -2.0f64..2.0), n).prop_map(|rows| {
        rows.into_iter()
            .map(|(t, d, a, b)| (t as f64 * 0.25, d, a, b))
            .collect()
    })
}

fn dataset(rows: &[(f64, bool, f64, f64)]) -> SurvivalDataset {
    let n = rows.len();
    let mut x = DMatrix::zeros(n, 2);
    for (i, r) in rows.iter().enumerate() {
        x[(i, 0)] = r.2;
        x[(i, 1)] = r.3;
    }
    SurvivalDataset::complete(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        x,
        vec![
            CovariateMeta::new("a", CovariateKind::Continuous),
            CovariateMeta::new("b", CovariateKind::Continuous),
        ],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spline_basis_is_linear_beyond_the_last_knot(knots in increasing_knots(7), s in 0.0f64..5.0, h in 0.1f64..2.0) {
        let spec = TveSpec::rcs(knots.clone()).unwrap();
        let t = knots[knots.len() - 1] + s;
        let (a, b, c) = (spec.basis(t).unwrap(), spec.basis(t + h).unwrap(), spec.basis(t + 2.0 * h).unwrap());
        for j in 0..spec.dimension() {
            let second = a[j] - 2.0 * b[j] + c[j];
            prop_assert!(second.abs() <= 1e-9 * (1.0 + a[j].abs().max(c[j].abs())), "column {j}: {second}");
        }
    }

    #[test]
    fn spline_basis_is_linear_before_the_first_knot(knots in increasing_knots(7), f in 0.0f64..1.0) {
        let spec = TveSpec::rcs(knots.clone()).unwrap();
        let t = f * knots[0];
        let b = spec.basis(t).unwrap();
        prop_assert_eq!(b[0], 1.0);
        prop_assert_eq!(b[1], t);
        prop_assert!(b[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_basis_is_one_hot(cuts in increasing_knots(6), t in 0.001f64..20.0) {
        let spec = TveSpec::step(cuts).unwrap();
        let b = spec.basis(t).unwrap();
        prop_assert_eq!(b.iter().filter(|&&v| v == 1.0).count(), 1);
        prop_assert_eq!(b.iter().filter(|&&v| v == 0.0).count(), b.len() - 1);
    }

    #[test]
    fn score_matches_differences(rows in subjects(8..=30), beta in prop::collection::vec(-0.5f64..0.5, 3)) {
        let d = dataset(&rows);
        prop_assume!(d.n_events() > 0);
        let specs = [TveSpec::linear(), TveSpec::constant()];
        let pl = PartialLikelihood::new(&d, &specs, d.covariates()).unwrap();
        let score = pl.evaluate(&beta, false).unwrap().score;
        for j in 0..3 {
            let h = 1e-5;
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (pl.log_likelihood(&up).unwrap() - pl.log_likelihood(&down).unwrap()) / (2.0 * h);
            prop_assert!((score[j] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "component {j}: {} vs {fd}", score[j]);
        }
    }

    #[test]
    fn fit_ignores_row_order(rows in subjects(15..=40), seed in any::<u64>()) {
        let d = dataset(&rows);
        let specs = [TveSpec::constant(), TveSpec::constant()];
        let first = fit(&d, &specs, d.covariates());
        let mut order: Vec<usize> = (0..rows.len()).collect();
        // deterministic shuffle from the seed
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted: Vec<_> = order.iter().map(|&i| rows[i]).collect();
        let p = dataset(&permuted);
        let second = fit(&p, &specs, p.covariates());
        match (first, second) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.coefficients().iter().zip(b.coefficients().iter()) {
                    prop_assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()));
                }
                prop_assert!((a.log_partial_likelihood() - b.log_partial_likelihood()).abs() <= 1e-8 * (1.0 + a.log_partial_likelihood().abs()));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one ordering failed: {:?} / {:?}", a.err(), b.err()),
        }
    }

    #[test]
    fn nelson_aalen_is_monotone_and_bounded(rows in subjects(1..=40), probes in prop::collection::vec(0.0f64..12.0, 1..20)) {
        let d = dataset(&rows);
        let na = nelson_aalen(&d);
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        for w in probes.windows(2) {
            prop_assert!(na.h(w[0]) <= na.h(w[1]));
            prop_assert!(na.h1(w[0]) <= na.h1(w[1]));
        }
        for &t in &probes {
            prop_assert!(na.h1(t) <= t * na.h(t) + 1e-12);
        }
    }

    #[test]
    fn rubin_total_variance_is_within_plus_inflated_between(
        estimates in prop::collection::vec(-3.0f64..3.0, 2..12),
        variances in prop::collection::vec(0.01f64..2.0, 12),
    ) {
        let m = estimates.len();
        let est: Vec<DVector<f64>> = estimates.iter().map(|&e| DVector::from_element(1, e)).collect();
        let cov: Vec<DMatrix<f64>> = variances[..m].iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
        let pooled = rubin_pool(&est, &cov).unwrap();
        let mean = estimates.iter().sum::<f64>() / m as f64;
        let within = variances[..m].iter().sum::<f64>() / m as f64;
        let between = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        prop_assert!((pooled.coefficients[0] - mean).abs() < 1e-12);
        prop_assert!((pooled.within[(0, 0)] - within).abs() < 1e-12);
        prop_assert!((pooled.between[(0, 0)] - between).abs() < 1e-12);
        prop_assert!((pooled.total[(0, 0)] - (within + (1.0 + 1.0 / m as f64) * between)).abs() < 1e-12);
        prop_assert!(pooled.total[(0, 0)] >= pooled.within[(0, 0)]);
    }
}

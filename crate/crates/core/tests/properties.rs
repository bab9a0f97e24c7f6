use causal_bench_core::benchmark::mse_metric;
use causal_bench_core::data::{read_csv, write_csv, Arm, CovariateSchema, Dataset, Unit};
use causal_bench_core::learners::{super_learner_weights, BoostingConfig, ForestConfig, LearnerSpec};
use causal_bench_core::matching::{greedy_nn_match, optimal_pair_match, DistanceMatrix, GreedyOrder};
use causal_bench_core::outcome::fit_ols;
use causal_bench_core::propensity::{fit_logistic_irls, IrlsConfig};
use causal_bench_core::synthgen::{generate, reflux_like};
use causal_bench_core::weighting::{aipw_estimate, ipw_estimate, make_weights, WeightConfig};
use causal_bench_core::{Estimand, Interval};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn mixed_dataset(rows: &[(bool, bool, f64, u8)]) -> Dataset {
    let schema = vec![
        CovariateSchema::continuous("age"),
        CovariateSchema::binary("female"),
        CovariateSchema::categorical("grade", &["a", "b", "c"]),
    ];
    let units = rows
        .iter()
        .enumerate()
        .map(|(i, &(rct, z, age, grade))| Unit {
            id: i as i64 + 1,
            arm: if rct { Arm::Rct } else { Arm::Nrs },
            z,
            y: vec![age * 0.5 + f64::from(grade)],
            x: vec![age, f64::from(i % 2 == 0), f64::from(grade == 1), f64::from(grade == 2)],
        })
        .collect();
    Dataset::new(schema, vec!["y_score".into()], units).unwrap()
}

fn row_strategy() -> impl Strategy<Value = (bool, bool, f64, u8)> {
    (any::<bool>(), any::<bool>(), -1e6f64..1e6, 0u8..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_and_partition(rows in prop::collection::vec(row_strategy(), 1..30)) {
        let d = mixed_dataset(&rows);
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), d.schema()).unwrap();
        for (a, b) in d.units().iter().zip(back.units()) {
            prop_assert_eq!(a.id, b.id);
            prop_assert_eq!(a.z, b.z);
            for (u, v) in a.x.iter().chain(&a.y).zip(b.x.iter().chain(&b.y)) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
            prop_assert!(a.x[2] + a.x[3] <= 1.0);
        }
        let n_rct = d.arm_subset(Arm::Rct).map_or(0, |s| s.len());
        let n_nrs = d.arm_subset(Arm::Nrs).map_or(0, |s| s.len());
        prop_assert_eq!(n_rct + n_nrs, d.len());
    }

    #[test]
    fn logistic_fit_matches_rate_and_rescaling(
        xs in prop::collection::vec(-3.0f64..3.0, 30..80),
        flips in prop::collection::vec(0.0f64..1.0, 80),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let n = xs.len();
        let z: Vec<f64> = (0..n).map(|i| f64::from(flips[i] < 1.0 / (1.0 + (-xs[i]).exp()))).collect();
        let rate = z.iter().sum::<f64>() / n as f64;
        prop_assume!(rate > 0.1 && rate < 0.9);
        let cfg = IrlsConfig { ridge: 0.0, ..IrlsConfig::default() };
        let x = DMatrix::from_column_slice(n, 1, &xs);
        let m = fit_logistic_irls(&x, &z, &cfg).unwrap();
        prop_assume!(!m.separation);
        let e = m.predict(&x).unwrap();
        prop_assert!(e.iter().all(|&p| p > 0.0 && p < 1.0));
        prop_assert!((e.iter().sum::<f64>() / n as f64 - rate).abs() < 1e-8);
        let xr = x.map(|v| v * scale + shift);
        let mr = fit_logistic_irls(&xr, &z, &cfg).unwrap();
        prop_assert!((mr.coefficients[0] * scale - m.coefficients[0]).abs() < 1e-6 * (1.0 + m.coefficients[0].abs()));
        for (a, b) in e.iter().zip(mr.predict(&xr).unwrap()) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn optimal_match_ignores_unit_order(
        nt in 1usize..=5,
        extra in 0usize..=3,
        vals in prop::collection::vec(0.0f64..20.0, 64),
        rot in 0usize..8,
    ) {
        let nc = nt + extra;
        let d = DMatrix::from_fn(nt, nc, |i, j| vals[i * 8 + j]);
        let a = optimal_pair_match(&DistanceMatrix::from_values(d.clone()));
        a.audit().unwrap();
        let permuted = DMatrix::from_fn(nt, nc, |i, j| d[((i + rot) % nt, (j + rot) % nc)]);
        let b = optimal_pair_match(&DistanceMatrix::from_values(permuted));
        prop_assert!((a.objective - b.objective).abs() < 1e-9);
        prop_assert_eq!(a.len(), b.len());
        let g = greedy_nn_match(&DistanceMatrix::from_values(d), GreedyOrder::DataOrder);
        prop_assert!(a.objective <= g.objective + 1e-9);
    }

    #[test]
    fn weighting_identities(
        y in prop::collection::vec(-10.0f64..10.0, 12),
        mu in prop::collection::vec(-5.0f64..5.0, 24),
        c in -100.0f64..100.0,
    ) {
        let z: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        // With a constant score equal to the treated share, both weightings coincide.
        let e_share = vec![4.0 / 12.0; 12];
        let ht_cfg = WeightConfig { normalized: false, ..WeightConfig::default() };
        let a = ipw_estimate(&y, &z, &make_weights(&z, &e_share, Estimand::Ate, &WeightConfig::default()).unwrap()).unwrap();
        let b = ipw_estimate(&y, &z, &make_weights(&z, &e_share, Estimand::Ate, &ht_cfg).unwrap()).unwrap();
        prop_assert!((a.tau - b.tau).abs() < 1e-9);

        // The shift cancels when each arm's inverse weights sum to n, as they do here.
        let (mu1, mu0) = (&mu[..12], &mu[12..]);
        let shifted1: Vec<f64> = mu1.iter().map(|v| v + c).collect();
        let shifted0: Vec<f64> = mu0.iter().map(|v| v + c).collect();
        let base = aipw_estimate(&y, &z, &e_share, mu1, mu0, Estimand::Ate).unwrap();
        let moved = aipw_estimate(&y, &z, &e_share, &shifted1, &shifted0, Estimand::Ate).unwrap();
        prop_assert!((base.tau - moved.tau).abs() < 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn ols_predictions_survive_affine_reparameterization(
        vals in prop::collection::vec(-5.0f64..5.0, 60),
        scale in 0.2f64..5.0,
        shift in -10.0f64..10.0,
    ) {
        let x = DMatrix::from_fn(30, 2, |i, j| vals[i * 2 + j]);
        let y: Vec<f64> = (0..30).map(|i| 1.0 + x[(i, 0)] - 2.0 * x[(i, 1)] + vals[(i * 7) % 60] * 0.3).collect();
        let base = fit_ols(&x, &y, None).unwrap().predict(&x);
        let xr = x.map(|v| v * scale + shift);
        let moved = fit_ols(&xr, &y, None).unwrap().predict(&xr);
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn mse_is_monotone(bias in -3.0f64..3.0, len in 0.0f64..4.0, more in 0.0f64..1.0) {
        let ci = |l: f64| Interval { lo: -l / 2.0, hi: l / 2.0 };
        prop_assert!((mse_metric(0.0, ci(len)) - len).abs() < 1e-12);
        prop_assert!(mse_metric(bias, ci(len)) >= 0.0);
        prop_assert!(mse_metric(bias.abs() + more, ci(len)) >= mse_metric(bias, ci(len)));
        prop_assert!(mse_metric(bias, ci(len + more)) >= mse_metric(bias, ci(len)));
    }

    #[test]
    fn stacking_weights_lie_on_the_simplex(
        preds in prop::collection::vec(-3.0f64..3.0, 120),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let p = DMatrix::from_fn(40, 3, |i, j| preds[i * 3 + j]);
        let y: Vec<f64> = (0..40).map(|i| 0.6 * p[(i, 0)] + 0.4 * p[(i, 2)] + noise[i]).collect();
        let fit = super_learner_weights(&p, &y);
        prop_assert!(fit.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn synthetic_units_satisfy_consistency_and_are_reproducible() {
    let a = generate(&reflux_like(3)).unwrap();
    for su in &a.units {
        for k in 0..su.unit.y.len() {
            let want = if su.unit.z { su.y1[k] } else { su.y0[k] };
            assert_eq!(su.unit.y[k], want);
        }
    }
    let b = generate(&reflux_like(3)).unwrap();
    assert_eq!(a.units, b.units);
    assert_eq!(a.truth, b.truth);
}

#[test]
fn learners_are_deterministic_given_seed() {
    let x = DMatrix::from_fn(80, 3, |i, j| ((i * 7 + j * 13) % 17) as f64 / 4.0);
    let y: Vec<f64> = (0..80).map(|i| x[(i, 0)] - x[(i, 1)] * x[(i, 2)] + (i % 5) as f64 * 0.1).collect();
    let specs = [
        LearnerSpec::Forest(ForestConfig { n_trees: 20, ..ForestConfig::default() }),
        LearnerSpec::Boosting(BoostingConfig::default()),
        LearnerSpec::Linear,
    ];
    for spec in specs {
        let a = spec.fit(&x, &y, 9).unwrap().predict(&x);
        let b = spec.fit(&x, &y, 9).unwrap().predict(&x);
        assert_eq!(a, b);
    }
}

use causal_bench_core::balance::balance_table;
use causal_bench_core::benchmark::{run_benchmark, BootstrapConfig, MethodSpec};
use causal_bench_core::matching::{cardinality_match, default_constraints, post_match_balance, CardinalityConfig};
use causal_bench_core::synthgen::{generate, reflux_like};
use causal_bench_core::{BenchmarkConfig, DenominatorPolicy, Verdict};

fn config(seed: u64, jobs: usize) -> BenchmarkConfig {
    BenchmarkConfig {
        methods: ["regadj", "ipw", "aipw", "nnmatch+ra"].iter().map(|m| MethodSpec::new(m)).collect(),
        bootstrap: BootstrapConfig { reps: 100, seed: None },
        seed,
        jobs: Some(jobs),
        ..Default::default()
    }
}

#[test]
fn generated_study_benchmarks_end_to_end() {
    let data = generate(&reflux_like(21)).unwrap();
    assert_eq!((data.rct.len(), data.nrs.len()), (357, 453));

    let nrs_balance = balance_table(&data.nrs, None, DenominatorPolicy::ControlSd).unwrap();
    let heartburn = nrs_balance.rows.iter().find(|r| r.covariate == "heartburn").unwrap();
    assert!(heartburn.std_diff.unwrap() < -0.5);

    let report = run_benchmark(&config(4, 1), &data.rct, &data.nrs).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.rows.len(), 4 * data.nrs.outcome_names().len());
    for row in &report.rows {
        assert_eq!(row.verdict == Verdict::X, !row.std_bias_ci.contains(0.0));
        assert!(row.mse >= 0.0);
        assert!(row.estimate.ci.lo <= row.estimate.tau && row.estimate.tau <= row.estimate.ci.hi);
        assert_eq!(row.replicates, 100);
    }
}

#[test]
fn cardinality_match_meets_its_constraints_on_generated_data() {
    let nrs = generate(&reflux_like(21)).unwrap().nrs;
    let m = cardinality_match(&nrs, &default_constraints(&nrs, 0.1), &CardinalityConfig { gap: 0.03, ..Default::default() }).unwrap();
    m.audit().unwrap();
    assert!(m.len() >= 2);
    let after = post_match_balance(&nrs, &m, DenominatorPolicy::PooledSd).unwrap();
    assert!(after.max_abs_std_diff() <= 0.1 + 1e-9);
}

#[test]
fn reruns_are_identical_across_thread_counts() {
    let data = generate(&reflux_like(8)).unwrap();
    let a = run_benchmark(&config(2, 1), &data.rct, &data.nrs).unwrap();
    let b = run_benchmark(&config(2, 2), &data.rct, &data.nrs).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

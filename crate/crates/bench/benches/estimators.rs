use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use causal_bench_core::learners::{fit_boosting, fit_lasso, fit_random_forest, BoostingConfig, ForestConfig};
use causal_bench_core::matching::{match_dataset, DistanceSpec, GreedyOrder, MatchAlgorithm, MatchSpec, Metric};
use causal_bench_core::propensity::{fit_propensity, IrlsConfig};
use causal_bench_core::synthgen::{generate, reflux_like};
use causal_bench_core::weighting::{aipw, ipw, WeightConfig};
use causal_bench_core::{Dataset, Estimand};

const OUTCOME: &str = "y_quality_of_life";

fn nrs(n: usize) -> Dataset {
    let mut cfg = reflux_like(11);
    cfg.n_rct = 40;
    cfg.n_nrs = n;
    generate(&cfg).unwrap().nrs
}

fn bench_propensity(c: &mut Criterion) {
    let mut g = c.benchmark_group("propensity_irls");
    for n in [453, 2000, 10_000] {
        let d = nrs(n);
        let cols = d.covariate_indices(false);
        g.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| fit_propensity(black_box(d), &cols, &IrlsConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_weighting(c: &mut Criterion) {
    let d = nrs(2000);
    c.bench_function("ipw_2000", |b| b.iter(|| ipw(black_box(&d), OUTCOME, Estimand::Ate, &WeightConfig::default()).unwrap()));
    c.bench_function("aipw_2000", |b| b.iter(|| aipw(black_box(&d), OUTCOME, Estimand::Ate).unwrap()));
}

fn bench_matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("matching");
    for n in [453, 1500] {
        let d = nrs(n);
        let specs = [
            ("greedy_logit", MatchAlgorithm::Greedy { order: GreedyOrder::DataOrder }, Metric::PscoreLinear),
            ("optimal_logit", MatchAlgorithm::Optimal, Metric::PscoreLinear),
            ("optimal_mahalanobis", MatchAlgorithm::Optimal, Metric::Mahalanobis),
        ];
        for (name, algorithm, metric) in specs {
            let spec = MatchSpec { algorithm, distance: DistanceSpec { metric, caliper: None } };
            g.bench_with_input(BenchmarkId::new(name, n), &d, |b, d| b.iter(|| match_dataset(black_box(d), &spec).unwrap()));
        }
    }
    g.finish();
}

fn bench_learners(c: &mut Criterion) {
    let d = nrs(1000);
    let x = d.covariates();
    let y = d.outcome(OUTCOME).unwrap();
    let mut g = c.benchmark_group("learners_1000");
    g.sample_size(10);
    g.bench_function("lasso", |b| b.iter(|| fit_lasso(black_box(&x), &y, 0.1)));
    g.bench_function("forest_100", |b| {
        let cfg = ForestConfig { n_trees: 100, ..Default::default() };
        b.iter(|| fit_random_forest(black_box(&x), &y, &cfg, 1))
    });
    g.bench_function("boosting", |b| b.iter(|| fit_boosting(black_box(&x), &y, &BoostingConfig::default())));
    g.finish();
}

criterion_group!(benches, bench_propensity, bench_weighting, bench_matching, bench_learners);
criterion_main!(benches);

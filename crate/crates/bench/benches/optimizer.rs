use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use edgepose_core::metrics::DeviceThresholds;
use edgepose_core::{
    exhaustive_search, optimize, optimize_strategy, solve_tau, OptimizerConfig, Scenario,
    ScenarioParams, Strategy, ThresholdSet,
};

fn bench_optimizer(c: &mut Criterion) {
    let scenario = Scenario::table_defaults();
    let config = OptimizerConfig::default();

    c.bench_function("optimize/defaults", |b| {
        b.iter(|| optimize(black_box(&scenario), &config).unwrap())
    });

    let hetero = Scenario::new(ScenarioParams {
        gains_db: Some(vec![-95.0, -100.0, -105.0, -110.0]),
        ..Default::default()
    })
    .unwrap();
    c.bench_function("optimize/heterogeneous_gains", |b| {
        b.iter(|| optimize(black_box(&hetero), &config).unwrap())
    });

    for strategy in Strategy::ALL {
        c.bench_function(&format!("optimize_strategy/{}", strategy.name()), |b| {
            b.iter(|| optimize_strategy(black_box(&scenario), strategy, &config).unwrap())
        });
    }

    let thresholds = ThresholdSet::uniform(
        4,
        DeviceThresholds {
            low: 0.3,
            high: 0.7,
            server: 0.5,
        },
    );
    c.bench_function("solve_tau/defaults", |b| {
        b.iter(|| solve_tau(black_box(&scenario), &thresholds, &config).unwrap())
    });

    let pair = Scenario::new(ScenarioParams {
        n_devices: 2,
        ..Default::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("exhaustive");
    group.sample_size(10);
    group.bench_function("n2_m11", |b| {
        b.iter(|| exhaustive_search(black_box(&pair), 11, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_optimizer);
criterion_main!(benches);

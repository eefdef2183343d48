use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use edgepose_core::geometry::{project, triangulate};
use edgepose_core::metrics::DeviceThresholds;
use edgepose_core::sim::{generate_rig, simulate};
use edgepose_core::{Observation2D, Scenario, ThresholdSet, TimeAllocation};
use nalgebra::Vector3;

fn bench_pipeline(c: &mut Criterion) {
    let rig = generate_rig(8, [10.0, 10.0, 3.0]).unwrap();
    let point = Vector3::new(3.2, 6.1, 1.4);
    let observations: Vec<Observation2D> = rig
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let (u, v) = project(cam, &point).unwrap();
            Observation2D {
                u,
                v,
                camera_index: i,
                confidence: 1.0,
            }
        })
        .collect();
    c.bench_function("triangulate/8_views", |b| {
        b.iter(|| triangulate(black_box(&observations), &rig).unwrap())
    });

    let scenario = Scenario::table_defaults();
    let thresholds = ThresholdSet::uniform(
        4,
        DeviceThresholds {
            low: 0.3,
            high: 0.7,
            server: 0.5,
        },
    );
    let tau = TimeAllocation::uniform(4);
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    group.bench_function("defaults_1000_frames", |b| {
        b.iter(|| simulate(black_box(&scenario), &thresholds, &tau, 1000, 1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);

use std::sync::Arc;

use edgepose_core::confidence::{ConfidenceModel, ConfidenceQuad};
use edgepose_core::delay;
use edgepose_core::geometry::{self, mpjpe, project, triangulate};
use edgepose_core::metrics::{self, DeviceThresholds};
use edgepose_core::sim::generate_rig;
use edgepose_core::{
    optimize, solve_tau, CameraProjection, Observation2D, OptimizerConfig, Pose3D, Scenario,
    ScenarioParams, ThresholdSet, TimeAllocation,
};
use nalgebra::{Matrix3x4, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn beta_model() -> impl Strategy<Value = ConfidenceModel> {
    (0.5f64..20.0, 0.5f64..20.0).prop_map(|(a, b)| ConfidenceModel::beta(a, b).unwrap())
}

fn quad() -> impl Strategy<Value = ConfidenceQuad> {
    (beta_model(), beta_model(), beta_model(), beta_model()).prop_map(|(a, b, c, d)| {
        ConfidenceQuad {
            dev_pos: a,
            dev_neg: b,
            srv_pos: c,
            srv_neg: d,
        }
    })
}

fn ordered_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| (a.min(b), a.max(b)))
}

fn observe(cams: &[CameraProjection], x: &Vector3<f64>) -> Vec<Observation2D> {
    cams.iter()
        .enumerate()
        .map(|(i, c)| {
            let (u, v) = project(c, x).unwrap();
            Observation2D {
                u,
                v,
                camera_index: i,
                confidence: 1.0,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn device_outcomes_conserve_mass(q in quad(), (low, high) in ordered_pair()) {
        let d = metrics::device_outcomes(&q, low, high).unwrap();
        prop_assert!((d.true_pos + d.false_neg + d.uncertain_pos - 1.0).abs() < 1e-12);
        prop_assert!((d.false_pos + d.true_neg + d.uncertain_neg - 1.0).abs() < 1e-12);
        for p in [d.true_pos, d.false_neg, d.false_pos, d.true_neg, d.uncertain_pos, d.uncertain_neg] {
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&p));
        }
    }

    #[test]
    fn cooperative_accuracy_reduces(q in quad(), t in 0.0f64..=1.0, s in 0.0f64..=1.0) {
        let srv = metrics::server_outcomes(&q, s).unwrap();
        let d = metrics::device_outcomes(&q, t, t).unwrap();
        prop_assert!((metrics::accuracy_cooperative(&d, &srv) - metrics::accuracy_device_centric(&d)).abs() < 1e-12);
        let all = metrics::device_outcomes(&q, 0.0, 1.0).unwrap();
        prop_assert!((metrics::accuracy_cooperative(&all, &srv) - metrics::accuracy_server_centric(&srv)).abs() < 1e-12);
        let c = metrics::device_outcomes(&q, 0.0, t).unwrap();
        prop_assert!((metrics::accuracy_cooperative(&c, &srv) - metrics::accuracy_cascade(&q, t, s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_a_probability(q in quad(), (low, high) in ordered_pair(), s in 0.0f64..=1.0) {
        let a = metrics::accuracy_cooperative(
            &metrics::device_outcomes(&q, low, high).unwrap(),
            &metrics::server_outcomes(&q, s).unwrap(),
        );
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn cdf_is_monotone(m in beta_model(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(m.cdf(lo) <= m.cdf(hi) + 1e-15);
        prop_assert!(m.cdf(-1.0) == 0.0 && m.cdf(2.0) == 1.0);
    }

    #[test]
    fn delay_components_sum_and_grow_with_load(
        alpha in 0.0f64..=0.5, beta in 0.0f64..=0.5, extra in 0.0f64..=0.5, gain in -120.0f64..-80.0
    ) {
        let s = Scenario::new(ScenarioParams { gains_db: Some(vec![gain; 4]), ..Default::default() }).unwrap();
        let tau = TimeAllocation::uniform(4);
        let d1 = delay::delay_cooperative(&s.traffic, &s.compute, &s.radio, &[alpha; 4], &[beta; 4], &tau).unwrap();
        let d2 = delay::delay_cooperative(&s.traffic, &s.compute, &s.radio, &[alpha + extra; 4], &[beta; 4], &tau).unwrap();
        prop_assert!((d1.components().iter().sum::<f64>() - d1.total).abs() < 1e-12);
        prop_assert!(d2.total >= d1.total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triangulation_inverts_projection(
        n in 2usize..=10,
        rx in 3.0f64..20.0, ry in 3.0f64..20.0, rz in 2.0f64..5.0,
        fx in 0.05f64..0.95, fy in 0.05f64..0.95, fz in 0.05f64..0.95,
    ) {
        let rig = generate_rig(n, [rx, ry, rz]).unwrap();
        let x = Vector3::new(fx * rx, fy * ry, fz * rz);
        let obs = observe(&rig, &x);
        let est = triangulate(&obs, &rig).unwrap();
        prop_assert!((est - x).norm() < 1e-9, "error {}", (est - x).norm());
    }

    #[test]
    fn camera_scale_is_irrelevant(
        lambda in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        fx in 0.1f64..0.9, fy in 0.1f64..0.9, fz in 0.1f64..0.9,
    ) {
        let rig = generate_rig(4, [10.0, 10.0, 3.0]).unwrap();
        let scaled: Vec<CameraProjection> = rig.iter().map(|c| c.scaled(lambda)).collect();
        let x = Vector3::new(fx * 10.0, fy * 10.0, fz * 3.0);
        for (a, b) in rig.iter().zip(&scaled) {
            let (u1, v1) = project(a, &x).unwrap();
            let (u2, v2) = project(b, &x).unwrap();
            prop_assert!((u1 - u2).abs() < 1e-9 && (v1 - v2).abs() < 1e-9);
        }
        let obs = observe(&rig, &x);
        let d = triangulate(&obs, &rig).unwrap() - triangulate(&obs, &scaled).unwrap();
        prop_assert!(d.norm() < 1e-9);
    }

    #[test]
    fn mpjpe_matches_direct_sum(seed in any::<u64>(), j in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pt = || Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let a: Vec<_> = (0..j).map(|_| pt()).collect();
        let b: Vec<_> = (0..j).map(|_| pt()).collect();
        let mut direct = 0.0;
        for k in 0..j {
            let d = a[k] - b[k];
            direct += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        }
        direct /= j as f64;
        let m = mpjpe(&Pose3D::new(a), &Pose3D::new(b)).unwrap().unwrap();
        prop_assert!((m - direct).abs() < 1e-12);
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn dlt_annihilates_the_true_point(fx in 0.05f64..0.95, fy in 0.05f64..0.95, fz in 0.05f64..0.95) {
        let rig = generate_rig(8, [10.0, 10.0, 3.0]).unwrap();
        let x = Vector3::new(fx * 10.0, fy * 10.0, fz * 3.0);
        let a = geometry::build_dlt_matrix(&observe(&rig, &x), &rig).unwrap();
        let r = &a * nalgebra::DVector::from_column_slice(&[x.x, x.y, x.z, 1.0]);
        prop_assert!(r.amax() < 1e-10 * a.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn time_shares_are_valid(
        gains in prop::collection::vec(-120.0f64..-80.0, 2..6),
        (low, high) in ordered_pair(),
    ) {
        let n = gains.len();
        let s = Scenario::new(ScenarioParams { n_devices: n, gains_db: Some(gains), ..Default::default() }).unwrap();
        let t = ThresholdSet::uniform(n, DeviceThresholds { low, high, server: 0.5 });
        let sol = solve_tau(&s, &t, &OptimizerConfig::default()).unwrap();
        prop_assert!(sol.tau.sum() <= 1.0 + 1e-6);
        prop_assert!(sol.tau.0.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(sol.lambda >= 0.0 && sol.mu >= 0.0);
    }

    #[test]
    fn optimizer_trace_is_monotone_and_feasible(
        q in quad(),
        gains in prop::collection::vec(-115.0f64..-85.0, 2..5),
        d_req in 0.15f64..1.0,
    ) {
        let n = gains.len();
        let s = Scenario::new(ScenarioParams {
            n_devices: n,
            gains_db: Some(gains),
            d_req_s: d_req,
            quads: vec![Arc::new(q)],
            ..Default::default()
        }).unwrap();
        let cfg = OptimizerConfig { grid_points: 41, ..Default::default() };
        let sol = optimize(&s, &cfg).unwrap();
        prop_assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!(sol.outer_iterations <= cfg.max_outer_iters);
        if sol.feasible {
            prop_assert!(sol.mean_delay_s <= d_req + 1e-9);
        }
    }
}

/// Mean triangulation error of noisy full-rig observations.
fn noisy_mpjpe(sigma: f64, frames: usize) -> f64 {
    let rig = generate_rig(8, [10.0, 10.0, 3.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total = 0.0;
    for _ in 0..frames {
        let x = Vector3::new(
            rng.random_range(0.5..9.5),
            rng.random_range(0.5..9.5),
            rng.random_range(0.1..2.0),
        );
        let mut obs = observe(&rig, &x);
        for o in &mut obs {
            o.u += sigma * rng.sample::<f64, _>(StandardNormal);
            o.v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        total += (triangulate(&obs, &rig).unwrap() - x).norm();
    }
    total / frames as f64
}

#[test]
fn triangulation_error_grows_with_pixel_noise() {
    let m: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| noisy_mpjpe(s, 1000))
        .collect();
    assert!(m[0] < 1e-9);
    assert!(m.windows(2).all(|w| w[1] > w[0]), "{m:?}");
}

#[test]
fn rank_three_required() {
    let mut p = Matrix3x4::zeros();
    p[(0, 0)] = 1.0;
    p[(1, 1)] = 1.0;
    assert!(CameraProjection::new(p).is_err());
}

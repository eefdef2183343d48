//! Frame-level Monte Carlo simulation of the cooperative pipeline.
//!
//! Every frame draws from its own ChaCha substream keyed by `(seed, frame
//! index)`, and every frame consumes the same sequence of draws whatever
//! the thresholds are. Results are therefore independent of the thread
//! count, and runs at different thresholds share common random numbers.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::delay::{self, DelayError, TimeAllocation};
use crate::geometry::{self, CameraProjection, GeometryError, Observation2D, Pose3D};
use crate::metrics::{self, MetricsError, ThresholdSet};
use crate::optimizer::{self, OptimizerConfig, OptimizerError, Strategy};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("at least one frame is required")]
    NoFrames,
    #[error("{what} has {got} entries for {expected} devices")]
    DeviceCount {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid value {value} for sweep axis {axis}")]
    AxisValue { axis: &'static str, value: f64 },
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
}

/// Image size of the synthetic cameras, in pixels.
pub const IMAGE_SIZE: (f64, f64) = (1920.0, 1080.0);
/// Horizontal field of view of the synthetic cameras, in degrees.
pub const HFOV_DEG: f64 = 90.0;

const FRAMES_PER_CHUNK: usize = 4096;
const PELVIS_HEIGHT_M: f64 = 1.0;
const ROOT_MARGIN_M: f64 = 0.5;
const JITTER: f64 = 0.2;

/// Cameras at wall height: corners first (the first two diagonally
/// opposite), then edge midpoints, then evenly along the perimeter. Each
/// looks at the room centre.
pub fn generate_rig(n_devices: usize, room: [f64; 3]) -> Result<Vec<CameraProjection>, SimError> {
    let [x, y, z] = room;
    let anchors = [
        (0.0, 0.0),
        (x, y),
        (x, 0.0),
        (0.0, y),
        (x / 2.0, 0.0),
        (x / 2.0, y),
        (0.0, y / 2.0),
        (x, y / 2.0),
    ];
    let positions: Vec<(f64, f64)> = if n_devices <= anchors.len() {
        anchors[..n_devices].to_vec()
    } else {
        let perimeter = 2.0 * (x + y);
        (0..n_devices)
            .map(|k| perimeter_point(k as f64 * perimeter / n_devices as f64, x, y))
            .collect()
    };
    let target = Vector3::new(x / 2.0, y / 2.0, z / 2.0);
    let (w, h) = IMAGE_SIZE;
    let focal = (w / 2.0) / (HFOV_DEG.to_radians() / 2.0).tan();
    positions
        .into_iter()
        .map(|(px, py)| {
            CameraProjection::look_at(Vector3::new(px, py, z), target, focal, (w / 2.0, h / 2.0))
                .map_err(SimError::from)
        })
        .collect()
}

fn perimeter_point(s: f64, x: f64, y: f64) -> (f64, f64) {
    if s < x {
        (s, 0.0)
    } else if s < x + y {
        (x, s - x)
    } else if s < 2.0 * x + y {
        (x - (s - x - y), y)
    } else {
        (0.0, y - (s - 2.0 * x - y))
    }
}

/// Joint offsets from the pelvis, meters, for a person facing +x.
const SKELETON: [[f64; 3]; 17] = [
    [0.00, 0.00, 0.75],   // nose
    [0.03, 0.03, 0.78],   // left eye
    [0.03, -0.03, 0.78],  // right eye
    [0.00, 0.08, 0.75],   // left ear
    [0.00, -0.08, 0.75],  // right ear
    [0.00, 0.18, 0.50],   // left shoulder
    [0.00, -0.18, 0.50],  // right shoulder
    [0.00, 0.22, 0.22],   // left elbow
    [0.00, -0.22, 0.22],  // right elbow
    [0.05, 0.22, -0.02],  // left wrist
    [0.05, -0.22, -0.02], // right wrist
    [0.00, 0.10, 0.00],   // left hip
    [0.00, -0.10, 0.00],  // right hip
    [0.02, 0.10, -0.42],  // left knee
    [0.02, -0.10, -0.42], // right knee
    [0.00, 0.10, -0.80],  // left ankle
    [0.00, -0.10, -0.80], // right ankle
];

fn template(joints: usize) -> Vec<Vector3<f64>> {
    let base: Vec<Vector3<f64>> = SKELETON.iter().map(|o| Vector3::from(*o)).collect();
    (0..joints)
        .map(|j| {
            if j < base.len() {
                base[j]
            } else {
                // Extra joints: midpoints of consecutive template joints.
                let k = (j - base.len()) % (base.len() - 1);
                (base[k] + base[k + 1]) / 2.0
            }
        })
        .collect()
}

/// A skeleton with jittered limbs at a uniform root position and heading.
fn random_pose<R: Rng>(rng: &mut R, template: &[Vector3<f64>], room: [f64; 3]) -> Pose3D {
    let sx = ROOT_MARGIN_M.min(room[0] / 2.0);
    let sy = ROOT_MARGIN_M.min(room[1] / 2.0);
    let root = Vector3::new(
        rng.random_range(sx..=room[0] - sx),
        rng.random_range(sy..=room[1] - sy),
        PELVIS_HEIGHT_M.min(room[2] / 2.0),
    );
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let joints = template
        .iter()
        .map(|o| {
            let s = rng.random_range(1.0 - JITTER..=1.0 + JITTER);
            root + rot * (o * s)
        })
        .collect();
    Pose3D::new(joints)
}

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose3D,
    /// `true` when the person is visible to the device (positive image).
    pub positive: Vec<bool>,
}

fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_frame<R: Rng>(rng: &mut R, template: &[Vector3<f64>], scenario: &Scenario) -> Frame {
    let pose = random_pose(rng, template, scenario.params.room_m);
    let occlusion = scenario.params.occlusion_prob;
    let positive = (0..scenario.n_devices())
        .map(|_| rng.random::<f64>() >= occlusion)
        .collect();
    Frame { pose, positive }
}

/// Ground-truth poses and per-device labels, reproducible from `seed`.
pub fn generate_frames(scenario: &Scenario, seed: u64, n_frames: usize) -> Vec<Frame> {
    let template = template(scenario.params.joints);
    (0..n_frames)
        .into_par_iter()
        .map(|k| draw_frame(&mut frame_rng(seed, k as u64), &template, scenario))
        .collect()
}

/// Aggregated outcome of a simulation run. Per-device rates are balanced
/// over the two classes (mean of the positive-class and negative-class
/// rates), matching the analytic definitions; the `*_sigma` fields are the
/// matching binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub frames: usize,
    pub accuracy: Vec<f64>,
    pub accuracy_sigma: Vec<f64>,
    pub mean_accuracy: f64,
    pub alpha: Vec<f64>,
    pub alpha_sigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_sigma: Vec<f64>,
    pub analytic_accuracy: Vec<f64>,
    pub analytic_alpha: Vec<f64>,
    pub analytic_beta: Vec<f64>,
    pub analytic_sum_accuracy: f64,
    /// Mean MPJPE over frames with a 3D estimate; `None` if every frame dropped.
    pub empirical_mpjpe_m: Option<f64>,
    /// Mean of the per-frame realized delay.
    pub mean_delay_s: f64,
    /// Analytic delay under the simulated class mix.
    pub analytic_delay_s: f64,
    pub drop_rate: f64,
    pub negative_fraction: f64,
    /// Positive-label frames seen by each device.
    pub positives: Vec<u64>,
    /// Negative-label frames seen by each device.
    pub negatives: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct DeviceTally {
    pos: u64,
    neg: u64,
    correct_pos: u64,
    correct_neg: u64,
    offload_pos: u64,
    offload_neg: u64,
    message_pos: u64,
    message_neg: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct ViewOutcome {
    positive: bool,
    offloaded: bool,
    message: bool,
    admitted: bool,
}

struct FrameOutcome {
    views: Vec<ViewOutcome>,
    mpjpe: Option<f64>,
    delay: f64,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    sum: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Pipeline<'a> {
    scenario: &'a Scenario,
    thresholds: &'a ThresholdSet,
    tau: &'a TimeAllocation,
    rig: Vec<CameraProjection>,
    template: Vec<Vector3<f64>>,
    seed: u64,
}

impl Pipeline<'_> {
    fn run_frame(&self, index: u64) -> Result<FrameOutcome, SimError> {
        let s = self.scenario;
        let n = s.n_devices();
        let j = self.template.len();
        let mut rng = frame_rng(self.seed, index);
        let frame = draw_frame(&mut rng, &self.template, s);

        let mut views = Vec::with_capacity(n);
        let mut observations: Vec<Vec<Observation2D>> = vec![Vec::with_capacity(n); j];
        for i in 0..n {
            let t = self.thresholds[i];
            let quad = s.quad(i);
            let positive = frame.positive[i];
            // Fixed draw order: device score, server score, decoy pose, pixel noise.
            let (dev, srv) = if positive {
                (&quad.dev_pos, &quad.srv_pos)
            } else {
                (&quad.dev_neg, &quad.srv_neg)
            };
            let c_dev = dev.draw(&mut rng);
            let c_srv = srv.draw(&mut rng);
            let decoy = random_pose(&mut rng, &self.template, s.params.room_m);
            let noise: Vec<(f64, f64)> = (0..j)
                .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();

            let mut v = ViewOutcome {
                positive,
                ..Default::default()
            };
            let mut confidence = c_dev;
            if c_dev > t.high {
                v.message = true;
                v.admitted = true;
            } else if c_dev > t.low {
                v.offloaded = true;
                confidence = c_srv;
                v.admitted = c_srv > t.server;
            }
            if v.admitted {
                let source = if positive { &frame.pose } else { &decoy };
                let sigma = s.params.noise.sigma(confidence);
                for (jj, point) in source.joints.iter().enumerate() {
                    if let Ok((u, vv)) = geometry::project(&self.rig[i], point) {
                        observations[jj].push(Observation2D {
                            u: u + sigma * noise[jj].0,
                            v: vv + sigma * noise[jj].1,
                            camera_index: i,
                            confidence,
                        });
                    }
                }
            }
            views.push(v);
        }

        let admitted = views.iter().filter(|v| v.admitted).count();
        let mpjpe = if admitted >= 2 {
            let mut estimate = Pose3D {
                joints: vec![Vector3::zeros(); j],
                valid: vec![false; j],
            };
            for (jj, obs) in observations.iter().enumerate() {
                if obs.len() >= 2 {
                    if let Ok(x) = geometry::triangulate(obs, &self.rig) {
                        estimate.joints[jj] = x;
                        estimate.valid[jj] = true;
                    }
                }
            }
            geometry::mpjpe(&estimate, &frame.pose)?
        } else {
            None
        };

        let alpha: Vec<f64> = views
            .iter()
            .map(|v| f64::from(u8::from(v.offloaded)))
            .collect();
        let beta: Vec<f64> = views
            .iter()
            .map(|v| f64::from(u8::from(v.message)))
            .collect();
        let delay =
            delay::delay_cooperative(&s.traffic, &s.compute, &s.radio, &alpha, &beta, self.tau)?
                .total;
        Ok(FrameOutcome {
            views,
            mpjpe,
            delay,
        })
    }
}

fn rate(k: u64, n: u64) -> Option<f64> {
    (n > 0).then(|| k as f64 / n as f64)
}

/// Balanced rate over the two classes and its binomial standard error.
fn balanced(k_pos: u64, n_pos: u64, k_neg: u64, n_neg: u64) -> (f64, f64) {
    let var = |p: f64, n: u64| p * (1.0 - p) / n as f64;
    match (rate(k_pos, n_pos), rate(k_neg, n_neg)) {
        (Some(p), Some(q)) => ((p + q) / 2.0, (var(p, n_pos) + var(q, n_neg)).sqrt() / 2.0),
        (Some(p), None) => (p, var(p, n_pos).sqrt()),
        (None, Some(q)) => (q, var(q, n_neg).sqrt()),
        (None, None) => (f64::NAN, f64::NAN),
    }
}

/// Runs `n_frames` frames through the two-threshold pipeline.
pub fn simulate(
    scenario: &Scenario,
    thresholds: &ThresholdSet,
    tau: &TimeAllocation,
    n_frames: usize,
    seed: u64,
) -> Result<SimResult, SimError> {
    let n = scenario.n_devices();
    if n_frames == 0 {
        return Err(SimError::NoFrames);
    }
    if thresholds.len() != n {
        return Err(SimError::DeviceCount {
            what: "threshold set",
            got: thresholds.len(),
            expected: n,
        });
    }
    if tau.len() != n {
        return Err(SimError::DeviceCount {
            what: "time allocation",
            got: tau.len(),
            expected: n,
        });
    }
    for t in thresholds.iter() {
        t.validate()?;
    }
    let pipeline = Pipeline {
        scenario,
        thresholds,
        tau,
        rig: generate_rig(n, scenario.params.room_m)?,
        template: template(scenario.params.joints),
        seed,
    };

    let mut tallies = vec![DeviceTally::default(); n];
    let mut mpjpe_sum = Sum::default();
    let mut delay_sum = Sum::default();
    let mut estimated = 0usize;
    let mut negatives = 0u64;
    let mut start = 0usize;
    while start < n_frames {
        let end = (start + FRAMES_PER_CHUNK).min(n_frames);
        let outcomes: Vec<FrameOutcome> = (start..end)
            .into_par_iter()
            .map(|k| pipeline.run_frame(k as u64))
            .collect::<Result<_, _>>()?;
        // Sequential reduction in frame order.
        for o in outcomes {
            for (t, v) in tallies.iter_mut().zip(&o.views) {
                let correct = v.admitted == v.positive;
                if v.positive {
                    t.pos += 1;
                    t.correct_pos += u64::from(correct);
                    t.offload_pos += u64::from(v.offloaded);
                    t.message_pos += u64::from(v.message);
                } else {
                    t.neg += 1;
                    negatives += 1;
                    t.correct_neg += u64::from(correct);
                    t.offload_neg += u64::from(v.offloaded);
                    t.message_neg += u64::from(v.message);
                }
            }
            if let Some(m) = o.mpjpe {
                mpjpe_sum.add(m);
                estimated += 1;
            }
            delay_sum.add(o.delay);
        }
        start = end;
    }

    let mut result = SimResult {
        frames: n_frames,
        accuracy: Vec::with_capacity(n),
        accuracy_sigma: Vec::with_capacity(n),
        mean_accuracy: 0.0,
        alpha: Vec::with_capacity(n),
        alpha_sigma: Vec::with_capacity(n),
        beta: Vec::with_capacity(n),
        beta_sigma: Vec::with_capacity(n),
        analytic_accuracy: Vec::with_capacity(n),
        analytic_alpha: Vec::with_capacity(n),
        analytic_beta: Vec::with_capacity(n),
        analytic_sum_accuracy: 0.0,
        empirical_mpjpe_m: (estimated > 0).then(|| mpjpe_sum.value() / estimated as f64),
        mean_delay_s: delay_sum.value() / n_frames as f64,
        analytic_delay_s: 0.0,
        drop_rate: 1.0 - estimated as f64 / n_frames as f64,
        negative_fraction: negatives as f64 / (n_frames * n) as f64,
        positives: tallies.iter().map(|t| t.pos).collect(),
        negatives: tallies.iter().map(|t| t.neg).collect(),
    };
    let occlusion = scenario.params.occlusion_prob;
    let mut mix_alpha = Vec::with_capacity(n);
    let mut mix_beta = Vec::with_capacity(n);
    for (i, t) in tallies.iter().enumerate() {
        let (a, sa) = balanced(t.correct_pos, t.pos, t.correct_neg, t.neg);
        let (o, so) = balanced(t.offload_pos, t.pos, t.offload_neg, t.neg);
        let (m, sm) = balanced(t.message_pos, t.pos, t.message_neg, t.neg);
        result.accuracy.push(a);
        result.accuracy_sigma.push(sa);
        result.alpha.push(o);
        result.alpha_sigma.push(so);
        result.beta.push(m);
        result.beta_sigma.push(sm);

        let th = thresholds[i];
        let dev = metrics::device_outcomes(scenario.quad(i), th.low, th.high)?;
        let srv = metrics::server_outcomes(scenario.quad(i), th.server)?;
        result
            .analytic_accuracy
            .push(metrics::accuracy_cooperative(&dev, &srv));
        result.analytic_alpha.push(dev.offload_prob());
        result.analytic_beta.push(dev.message_prob());
        mix_alpha.push((1.0 - occlusion) * dev.uncertain_pos + occlusion * dev.uncertain_neg);
        mix_beta.push((1.0 - occlusion) * dev.true_pos + occlusion * dev.false_pos);
    }
    result.mean_accuracy = result.accuracy.iter().sum::<f64>() / n as f64;
    result.analytic_sum_accuracy = result.analytic_accuracy.iter().sum();
    result.analytic_delay_s = delay::delay_cooperative(
        &scenario.traffic,
        &scenario.compute,
        &scenario.radio,
        &mix_alpha,
        &mix_beta,
        tau,
    )?
    .total;
    Ok(result)
}

/// Probability that device `i` contributes a view under its thresholds,
/// given the scenario's occlusion probability.
pub fn admission_prob(
    scenario: &Scenario,
    thresholds: &ThresholdSet,
    i: usize,
) -> Result<f64, SimError> {
    let t = thresholds[i];
    let dev = metrics::device_outcomes(scenario.quad(i), t.low, t.high)?;
    let srv = metrics::server_outcomes(scenario.quad(i), t.server)?;
    let pos = dev.true_pos + dev.uncertain_pos * srv.true_pos;
    let neg = dev.false_pos + dev.uncertain_neg * srv.false_pos;
    let occ = scenario.params.occlusion_prob;
    Ok((1.0 - occ) * pos + occ * neg)
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && v[idx[end]] == v[idx[k]] {
            end += 1;
        }
        let avg = (k + end - 1) as f64 / 2.0 + 1.0;
        for &i in &idx[k..end] {
            r[i] = avg;
        }
        k = end;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Row {
    pub thresholds: ThresholdSet,
    pub sum_accuracy: f64,
    pub mpjpe_m: Option<f64>,
    pub drop_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub rows: Vec<Lemma1Row>,
    /// Spearman correlation between summed accuracy and negated MPJPE;
    /// `None` when undefined.
    pub correlation: Option<f64>,
}

/// Simulates each threshold set and correlates analytic summed accuracy
/// with simulated MPJPE. All sets share the same frames.
pub fn validate_lemma1(
    scenario: &Scenario,
    sweep: &[ThresholdSet],
    n_frames: usize,
    seed: u64,
) -> Result<Lemma1Report, SimError> {
    let tau = TimeAllocation::uniform(scenario.n_devices());
    let mut rows = Vec::with_capacity(sweep.len());
    for t in sweep {
        let r = simulate(scenario, t, &tau, n_frames, seed)?;
        rows.push(Lemma1Row {
            thresholds: t.clone(),
            sum_accuracy: r.analytic_sum_accuracy,
            mpjpe_m: r.empirical_mpjpe_m,
            drop_rate: r.drop_rate,
        });
    }
    let (acc, neg_mpjpe): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.mpjpe_m.map(|m| (r.sum_accuracy, -m)))
        .unzip();
    let correlation = spearman(&acc, &neg_mpjpe);
    Ok(Lemma1Report { rows, correlation })
}

/// A threshold sweep from low to high summed accuracy, built from device 0's
/// confidence models: a single device threshold rising from 0 to its
/// accuracy-maximizing value, followed by an uncertain band widening
/// symmetrically around it.
pub fn lemma1_sweep(
    scenario: &Scenario,
    n_points: usize,
    grid_points: usize,
) -> Result<Vec<ThresholdSet>, SimError> {
    let n = scenario.n_devices();
    let quad = scenario.quad(0);
    let g = optimizer::grid(grid_points.max(2));
    let mut best_t = 0.0;
    let mut best_acc = f64::NEG_INFINITY;
    for &t in &g {
        let d = metrics::device_outcomes(quad, t, t)?;
        let a = d.true_pos + d.true_neg;
        if a > best_acc + 1e-12 {
            best_acc = a;
            best_t = t;
        }
    }
    let mut best_s = 0.5;
    let mut best_srv = f64::NEG_INFINITY;
    for &s in &g {
        let o = metrics::server_outcomes(quad, s)?;
        let a = o.true_pos + o.true_neg;
        if a > best_srv + 1e-12 {
            best_srv = a;
            best_s = s;
        }
    }
    let n_rising = n_points.div_ceil(2);
    let n_band = n_points - n_rising;
    let mut sets = Vec::with_capacity(n_points);
    for k in 0..n_rising {
        let t = if n_rising == 1 {
            best_t
        } else {
            best_t * k as f64 / (n_rising - 1) as f64
        };
        sets.push(ThresholdSet::uniform(
            n,
            metrics::DeviceThresholds {
                low: t,
                high: t,
                server: best_s,
            },
        ));
    }
    let max_w = best_t.min(1.0 - best_t);
    for k in 1..=n_band {
        let w = max_w * k as f64 / n_band as f64;
        sets.push(ThresholdSet::uniform(
            n,
            metrics::DeviceThresholds {
                low: (best_t - w).max(0.0),
                high: (best_t + w).min(1.0),
                server: best_s,
            },
        ));
    }
    Ok(sets)
}

/// Scenario parameter varied by [`sweep`]. Values are in SI units
/// (seconds, dB, bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    DReq,
    NDevices,
    GainDb,
    ImageBytes,
    TInfDevice,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::DReq,
        SweepAxis::NDevices,
        SweepAxis::GainDb,
        SweepAxis::ImageBytes,
        SweepAxis::TInfDevice,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DReq => "d_req",
            SweepAxis::NDevices => "n_devices",
            SweepAxis::GainDb => "gain_db",
            SweepAxis::ImageBytes => "image_bytes",
            SweepAxis::TInfDevice => "t_inf_device",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SimError> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| SimError::UnknownAxis(name.to_string()))
    }

    /// The scenario with this axis set to `value`.
    pub fn apply(&self, scenario: &Scenario, value: f64) -> Result<Scenario, SimError> {
        let bad = || SimError::AxisValue {
            axis: self.name(),
            value,
        };
        let mut p = scenario.params.clone();
        match self {
            SweepAxis::DReq => p.d_req_s = value,
            SweepAxis::NDevices => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(bad());
                }
                p.n_devices = value as usize;
                if p.gains_db.is_some() {
                    return Err(bad());
                }
            }
            SweepAxis::GainDb => {
                if !value.is_finite() {
                    return Err(bad());
                }
                p.gain_mean_db = value;
                p.gains_db = None;
            }
            SweepAxis::ImageBytes => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(bad());
                }
                p.image_bytes = value as u64;
            }
            SweepAxis::TInfDevice => p.t_inf_device_s = value,
        }
        Ok(Scenario::new(p)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub strategy: Strategy,
    pub sum_accuracy: f64,
    /// NaN unless simulation was requested and produced an estimate.
    pub mpjpe_m: f64,
    pub delay_s: f64,
    pub feasible: bool,
    /// NaN unless simulation was requested.
    pub drop_rate: f64,
    pub solution: optimizer::Solution,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub strategies: Vec<Strategy>,
    /// Frames simulated per point; `None` skips simulation.
    pub sim_frames: Option<usize>,
    pub config: OptimizerConfig,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            sim_frames: None,
            config: OptimizerConfig::default(),
        }
    }
}

/// Optimizes every strategy at every axis value. Infeasible points are
/// reported in the table with the smallest delay found.
pub fn sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    options: &SweepOptions,
) -> Result<Vec<SweepRow>, SimError> {
    let scenarios = values
        .iter()
        .map(|&v| axis.apply(scenario, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, Strategy)> = (0..values.len())
        .flat_map(|k| options.strategies.iter().map(move |&s| (k, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(k, strategy)| {
            let sc = &scenarios[k];
            let sol = optimizer::optimize_strategy(sc, strategy, &options.config)?;
            let (mpjpe_m, drop_rate) = match options.sim_frames {
                Some(frames) => {
                    let r = simulate(sc, &sol.thresholds, &sol.tau, frames, sc.params.seed)?;
                    (r.empirical_mpjpe_m.unwrap_or(f64::NAN), r.drop_rate)
                }
                None => (f64::NAN, f64::NAN),
            };
            let delay_s = if sol.feasible {
                sol.mean_delay_s
            } else {
                sol.mean_delay_s.min(sol.min_achievable_delay_s)
            };
            Ok(SweepRow {
                axis_value: values[k],
                strategy,
                sum_accuracy: sol.sum_accuracy,
                mpjpe_m,
                delay_s,
                feasible: sol.feasible,
                drop_rate,
                solution: sol,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str =
    "axis_value,strategy,sum_accuracy,mpjpe_m,delay_s,feasible,drop_rate";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    use crate::format_float as f;
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f(r.axis_value),
            r.strategy.name(),
            f(r.sum_accuracy),
            f(r.mpjpe_m),
            f(r.delay_s),
            r.feasible,
            f(r.drop_rate)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::{ConfidenceModel, ConfidenceQuad};
    use crate::metrics::DeviceThresholds;
    use crate::scenario::{NoiseModel, ScenarioParams};
    use std::sync::Arc;

    fn scenario_with(f: impl FnOnce(&mut ScenarioParams)) -> Scenario {
        let mut p = ScenarioParams::default();
        f(&mut p);
        Scenario::new(p).unwrap()
    }

    fn uniform_set(n: usize, low: f64, high: f64, server: f64) -> ThresholdSet {
        ThresholdSet::uniform(n, DeviceThresholds { low, high, server })
    }

    #[test]
    fn rig_layout() {
        let rig = generate_rig(8, [10.0, 10.0, 3.0]).unwrap();
        assert_eq!(rig.len(), 8);
        let centre = Vector3::new(5.0, 5.0, 1.5);
        let mut corners = 0;
        for cam in &rig {
            let c = cam.centre().unwrap();
            assert!((c.z - 3.0).abs() < 1e-9);
            let on_x_edge = c.x.abs() < 1e-9 || (c.x - 10.0).abs() < 1e-9;
            let on_y_edge = c.y.abs() < 1e-9 || (c.y - 10.0).abs() < 1e-9;
            assert!(on_x_edge || on_y_edge);
            corners += usize::from(on_x_edge && on_y_edge);
            let (u, v) = geometry::project(cam, &centre).unwrap();
            assert!((u - 960.0).abs() < 1e-6 && (v - 540.0).abs() < 1e-6);
        }
        assert_eq!(corners, 4);
        let two = generate_rig(2, [10.0, 10.0, 3.0]).unwrap();
        let d = two[0].centre().unwrap() - two[1].centre().unwrap();
        assert!((d.xy().norm() - 200f64.sqrt()).abs() < 1e-9);
        assert_eq!(generate_rig(12, [10.0, 10.0, 3.0]).unwrap().len(), 12);
    }

    #[test]
    fn frames_are_seeded_and_in_room() {
        let s = Scenario::table_defaults();
        let a = generate_frames(&s, 3, 50);
        assert_eq!(a, generate_frames(&s, 3, 50));
        assert_ne!(a, generate_frames(&s, 4, 50));
        for f in &a {
            assert_eq!(f.pose.len(), 17);
            for p in &f.pose.joints {
                assert!(p.x > 0.0 && p.x < 10.0 && p.y > 0.0 && p.y < 10.0);
                assert!(p.z > 0.0 && p.z < 3.0);
            }
        }
    }

    #[test]
    fn occlusion_extremes() {
        let none = scenario_with(|p| p.occlusion_prob = 0.0);
        assert!(generate_frames(&none, 1, 200)
            .iter()
            .all(|f| f.positive.iter().all(|&x| x)));
        let all = scenario_with(|p| p.occlusion_prob = 1.0);
        assert!(generate_frames(&all, 1, 200)
            .iter()
            .all(|f| f.positive.iter().all(|&x| !x)));
        // Negatives are discarded at a maximal device threshold.
        let r = simulate(
            &all,
            &uniform_set(4, 1.0, 1.0, 0.5),
            &TimeAllocation::uniform(4),
            300,
            1,
        )
        .unwrap();
        assert_eq!(r.drop_rate, 1.0);
        assert_eq!(r.empirical_mpjpe_m, None);
    }

    #[test]
    fn negative_fraction_matches_occlusion() {
        let s = Scenario::table_defaults();
        let frames = generate_frames(&s, 11, 10_000);
        let neg = frames
            .iter()
            .map(|f| f.positive.iter().filter(|&&x| !x).count())
            .sum::<usize>();
        let total = (10_000 * 4) as f64;
        let p = neg as f64 / total;
        assert!((p - 0.2).abs() < 3.0 * (0.2 * 0.8 / total).sqrt());
    }

    #[test]
    fn noise_free_full_admission_is_exact() {
        let s = scenario_with(|p| {
            p.occlusion_prob = 0.0;
            p.noise = NoiseModel {
                sigma_min_px: 0.0,
                sigma0_px: 0.0,
            };
        });
        let r = simulate(
            &s,
            &uniform_set(4, 0.0, 0.0, 0.5),
            &TimeAllocation::uniform(4),
            400,
            2,
        )
        .unwrap();
        assert!(r.empirical_mpjpe_m.unwrap() < 1e-6);
        assert_eq!(r.drop_rate, 0.0);
    }

    #[test]
    fn perfect_server_gives_perfect_accuracy() {
        let quad = ConfidenceQuad {
            srv_pos: ConfidenceModel::beta(500.0, 1.0).unwrap(),
            srv_neg: ConfidenceModel::beta(1.0, 500.0).unwrap(),
            ..ConfidenceQuad::default()
        };
        let s = scenario_with(|p| p.quads = vec![Arc::new(quad)]);
        let r = simulate(
            &s,
            &uniform_set(4, 0.0, 1.0, 0.5),
            &TimeAllocation::uniform(4),
            2000,
            3,
        )
        .unwrap();
        for a in &r.accuracy {
            assert!(*a > 0.999);
        }
        assert!(r.alpha.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn deterministic_across_runs() {
        let s = Scenario::table_defaults();
        let t = uniform_set(4, 0.3, 0.7, 0.5);
        let tau = TimeAllocation::uniform(4);
        assert_eq!(
            simulate(&s, &t, &tau, 500, 9).unwrap(),
            simulate(&s, &t, &tau, 500, 9).unwrap()
        );
    }

    #[test]
    fn device_centric_thresholds_never_offload() {
        let s = Scenario::table_defaults();
        let r = simulate(
            &s,
            &uniform_set(4, 0.4, 0.4, 0.5),
            &TimeAllocation::uniform(4),
            1000,
            5,
        )
        .unwrap();
        assert!(r.alpha.iter().all(|&a| a == 0.0));
        let fixed = delay::fixed_delay(&s.compute, true);
        assert!(r.mean_delay_s >= fixed);
    }

    #[test]
    fn drop_rate_matches_binomial_tail() {
        let s = Scenario::table_defaults();
        let t = uniform_set(4, 0.6, 0.8, 0.5);
        let frames = 8000;
        let r = simulate(&s, &t, &TimeAllocation::uniform(4), frames, 12).unwrap();
        let p = admission_prob(&s, &t, 0).unwrap();
        let q = 1.0 - p;
        let expected = q.powi(4) + 4.0 * p * q.powi(3);
        let sigma = (expected * (1.0 - expected) / frames as f64).sqrt();
        assert!(
            (r.drop_rate - expected).abs() < 3.0 * sigma,
            "{} vs {expected}",
            r.drop_rate
        );
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0], &[2.0]), None);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn lemma1_degenerate_cases() {
        let s = Scenario::table_defaults();
        let one = validate_lemma1(&s, &[uniform_set(4, 0.5, 0.5, 0.5)], 100, 1).unwrap();
        assert_eq!(one.correlation, None);

        let exact = scenario_with(|p| {
            p.occlusion_prob = 0.0;
            p.noise = NoiseModel {
                sigma_min_px: 0.0,
                sigma0_px: 0.0,
            };
        });
        let sets: Vec<ThresholdSet> = (0..3)
            .map(|k| uniform_set(4, 0.0, 0.0, k as f64 / 4.0))
            .collect();
        let r = validate_lemma1(&exact, &sets, 100, 1).unwrap();
        assert!(r.rows.iter().all(|row| row.mpjpe_m.unwrap() < 1e-6));
        assert_eq!(r.correlation, None);
    }

    #[test]
    fn lemma1_sweep_shape() {
        let s = Scenario::table_defaults();
        let sets = lemma1_sweep(&s, 25, 101).unwrap();
        assert_eq!(sets.len(), 25);
        assert_eq!(sets[0][0].high, 0.0);
        assert!((sets[12][0].high - 0.5).abs() < 1e-12);
        assert!(sets[24][0].low.abs() < 1e-12 && (sets[24][0].high - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_axes() {
        let s = Scenario::table_defaults();
        assert_eq!(SweepAxis::from_name("gain_db").unwrap(), SweepAxis::GainDb);
        assert!(SweepAxis::from_name("bogus").is_err());
        assert!(SweepAxis::NDevices.apply(&s, 2.5).is_err());
        assert_eq!(SweepAxis::NDevices.apply(&s, 8.0).unwrap().n_devices(), 8);
        let opts = SweepOptions {
            strategies: vec![Strategy::DeviceCentric],
            config: OptimizerConfig {
                grid_points: 21,
                ..Default::default()
            },
            ..Default::default()
        };
        let rows = sweep(&s, SweepAxis::DReq, &[0.3, 0.6], &opts).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}

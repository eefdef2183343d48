//! Experiment parameterization.
//!
//! [`ScenarioParams`] is the flat, user-facing description (defaults follow
//! the reference parameter table); [`Scenario`] is the validated form with
//! per-device channel gains resolved and radio units converted.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::confidence::ConfidenceQuad;
use crate::delay::{Backhaul, ComputeParams, DelayError, RadioParams, TrafficParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("at least two devices are needed for triangulation, got {0}")]
    TooFewDevices(usize),
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
    #[error("explicit gain list has {got} entries for {expected} devices")]
    GainCount { got: usize, expected: usize },
    #[error("per-device confidence list has {got} entries for {expected} devices")]
    QuadCount { got: usize, expected: usize },
    #[error(transparent)]
    Delay(#[from] DelayError),
}

/// Pixel noise as a function of the confidence of the model that admitted
/// a view: `sigma(c) = sigma_min + sigma0 * (1 - c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_min_px: f64,
    pub sigma0_px: f64,
}

impl NoiseModel {
    pub fn sigma(&self, confidence: f64) -> f64 {
        self.sigma_min_px + self.sigma0_px * (1.0 - confidence.clamp(0.0, 1.0))
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_min_px: 0.5,
            sigma0_px: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub n_devices: usize,
    pub fps: f64,
    pub image_bytes: u64,
    pub message_bytes: u64,
    pub t_inf_device_s: f64,
    pub t_inf_server_s: f64,
    pub t_pr_device_s: f64,
    pub t_pr_server_s: f64,
    pub backhaul: Backhaul,
    pub t_sc_tx_s: f64,
    pub d_req_s: f64,
    pub bandwidth_hz: f64,
    pub noise_dbm_hz: f64,
    pub tx_power_dbm: f64,
    pub gain_mean_db: f64,
    pub gain_std_db: f64,
    pub gains_db: Option<Vec<f64>>,
    pub joints: usize,
    pub room_m: [f64; 3],
    pub occlusion_prob: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// One shared quad, or one per device.
    pub quads: Vec<Arc<ConfidenceQuad>>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_devices: 4,
            fps: 2.0,
            image_bytes: 32 * 1024,
            message_bytes: 68,
            t_inf_device_s: 0.100,
            t_inf_server_s: 0.020,
            t_pr_device_s: 0.010,
            t_pr_server_s: 0.005,
            backhaul: Backhaul::FixedTime(0.0005),
            t_sc_tx_s: 0.020,
            d_req_s: 0.5,
            bandwidth_hz: 1e6,
            noise_dbm_hz: -165.0,
            tx_power_dbm: 30.0,
            gain_mean_db: -100.0,
            gain_std_db: 0.0,
            gains_db: None,
            joints: 17,
            room_m: [10.0, 10.0, 3.0],
            occlusion_prob: 0.2,
            noise: NoiseModel::default(),
            seed: 1,
            quads: vec![Arc::new(ConfidenceQuad::default())],
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ScenarioParams,
    pub traffic: TrafficParams,
    pub compute: ComputeParams,
    pub radio: RadioParams,
    pub gains_db: Vec<f64>,
    quads: Vec<Arc<ConfidenceQuad>>,
}

fn positive(what: &'static str, value: f64) -> Result<(), ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::NonPositive { what, value })
    }
}

impl Scenario {
    pub fn new(params: ScenarioParams) -> Result<Self, ScenarioError> {
        let n = params.n_devices;
        if n < 2 {
            return Err(ScenarioError::TooFewDevices(n));
        }
        positive("fps", params.fps)?;
        positive("image size", params.image_bytes as f64)?;
        positive("message size", params.message_bytes as f64)?;
        positive("delay requirement", params.d_req_s)?;
        positive("joint count", params.joints as f64)?;
        for (what, v) in ["room x", "room y", "room z"]
            .into_iter()
            .zip(params.room_m)
        {
            positive(what, v)?;
        }
        if !(0.0..=1.0).contains(&params.occlusion_prob) {
            return Err(ScenarioError::Probability("occlusion probability"));
        }
        if !(params.noise.sigma_min_px >= 0.0 && params.noise.sigma0_px >= 0.0) {
            return Err(ScenarioError::NonPositive {
                what: "pixel noise",
                value: params.noise.sigma_min_px.min(params.noise.sigma0_px),
            });
        }
        if params.gain_std_db < 0.0 || !params.gain_std_db.is_finite() {
            return Err(ScenarioError::NonPositive {
                what: "gain standard deviation",
                value: params.gain_std_db,
            });
        }
        let quads = match params.quads.len() {
            1 => vec![params.quads[0].clone(); n],
            len if len == n => params.quads.clone(),
            len => {
                return Err(ScenarioError::QuadCount {
                    got: len,
                    expected: n,
                })
            }
        };

        let gains_db = match &params.gains_db {
            Some(g) if g.len() != n => {
                return Err(ScenarioError::GainCount {
                    got: g.len(),
                    expected: n,
                })
            }
            Some(g) => g.clone(),
            None => draw_gains(params.gain_mean_db, params.gain_std_db, n, params.seed),
        };

        let traffic = TrafficParams {
            fps: params.fps,
            image_bits: params.image_bytes * 8,
            message_bits: params.message_bytes * 8,
        };
        let compute = ComputeParams {
            t_pr_device_s: params.t_pr_device_s,
            t_inf_device_s: params.t_inf_device_s,
            t_inf_server_s: params.t_inf_server_s,
            t_pr_server_s: params.t_pr_server_s,
            t_sc_tx_s: params.t_sc_tx_s,
            backhaul: params.backhaul,
        };
        compute.validate()?;
        let radio = RadioParams::from_db(
            params.bandwidth_hz,
            params.noise_dbm_hz,
            params.tx_power_dbm,
            &gains_db,
        )?;
        Ok(Self {
            params,
            traffic,
            compute,
            radio,
            gains_db,
            quads,
        })
    }

    /// The reference defaults: four devices, 0.5 s budget, -100 dB gains.
    pub fn table_defaults() -> Self {
        Self::new(ScenarioParams::default()).expect("defaults are valid")
    }

    pub fn n_devices(&self) -> usize {
        self.params.n_devices
    }

    pub fn d_req_s(&self) -> f64 {
        self.params.d_req_s
    }

    pub fn quad(&self, device: usize) -> &ConfidenceQuad {
        &self.quads[device]
    }

    pub fn quads(&self) -> &[Arc<ConfidenceQuad>] {
        &self.quads
    }

    /// All devices share one confidence quad and one channel gain.
    pub fn is_homogeneous(&self) -> bool {
        let q0 = &self.quads[0];
        self.quads
            .iter()
            .all(|q| Arc::ptr_eq(q, q0) || q.as_ref() == q0.as_ref())
            && self.gains_db.iter().all(|&g| g == self.gains_db[0])
    }

    /// Same scenario with a different delay budget.
    pub fn with_d_req(&self, d_req_s: f64) -> Result<Self, ScenarioError> {
        let mut p = self.params.clone();
        p.d_req_s = d_req_s;
        Self::new(p)
    }
}

/// Normally distributed gains in dB, reproducible from `seed`.
fn draw_gains(mean_db: f64, std_db: f64, n: usize, seed: u64) -> Vec<f64> {
    if std_db == 0.0 {
        return vec![mean_db; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A dedicated stream keeps gains independent of the frame generator.
    rng.set_stream(u64::MAX);
    let normal = Normal::new(mean_db, std_db).expect("finite std");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

//! Confusion-matrix probabilities and inference accuracy.
//!
//! A device classifies a frame as positive (`score > high`), uncertain
//! (`low < score <= high`, offloaded) or negative (`score <= low`,
//! discarded). Offloaded frames are re-scored by the server and kept when
//! `score > server`. Accuracy is averaged over a balanced positive/negative
//! prior.

use thiserror::Error;

use crate::confidence::ConfidenceQuad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("device thresholds out of order or range: low={low}, high={high}")]
    DeviceThresholds { low: f64, high: f64 },
    #[error("server threshold {0} outside [0, 1]")]
    ServerThreshold(f64),
    #[error("threshold set has {got} devices, expected {expected}")]
    DeviceCount { got: usize, expected: usize },
}

/// Outcome probabilities of the device stage. Positive-class mass is split
/// over `true_pos + false_neg + uncertain_pos`, negative-class mass over
/// `false_pos + true_neg + uncertain_neg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceOutcome {
    pub true_pos: f64,
    pub false_neg: f64,
    pub false_pos: f64,
    pub true_neg: f64,
    pub uncertain_pos: f64,
    pub uncertain_neg: f64,
}

impl DeviceOutcome {
    /// Probability that a frame is offloaded (`alpha`).
    pub fn offload_prob(&self) -> f64 {
        uncertain_prob(self)
    }

    /// Probability that a frame is forwarded as a 2D message (`beta`).
    pub fn message_prob(&self) -> f64 {
        positive_prob(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerOutcome {
    pub true_pos: f64,
    pub false_neg: f64,
    pub false_pos: f64,
    pub true_neg: f64,
}

impl ServerOutcome {
    /// A server that never errs.
    pub fn perfect() -> Self {
        Self {
            true_pos: 1.0,
            false_neg: 0.0,
            false_pos: 0.0,
            true_neg: 1.0,
        }
    }
}

/// The three thresholds of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceThresholds {
    pub low: f64,
    pub high: f64,
    pub server: f64,
}

impl DeviceThresholds {
    pub fn new(low: f64, high: f64, server: f64) -> Result<Self, MetricsError> {
        let t = Self { low, high, server };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(0.0 <= self.low && self.low <= self.high && self.high <= 1.0) {
            return Err(MetricsError::DeviceThresholds {
                low: self.low,
                high: self.high,
            });
        }
        if !(0.0..=1.0).contains(&self.server) {
            return Err(MetricsError::ServerThreshold(self.server));
        }
        Ok(())
    }
}

/// Per-device thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet(pub Vec<DeviceThresholds>);

impl ThresholdSet {
    pub fn new(per_device: Vec<DeviceThresholds>) -> Result<Self, MetricsError> {
        for t in &per_device {
            t.validate()?;
        }
        Ok(Self(per_device))
    }

    /// The same thresholds broadcast to `n` devices.
    pub fn uniform(n: usize, t: DeviceThresholds) -> Self {
        Self(vec![t; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeviceThresholds> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for ThresholdSet {
    type Output = DeviceThresholds;
    fn index(&self, i: usize) -> &DeviceThresholds {
        &self.0[i]
    }
}

pub fn device_outcomes(
    quad: &ConfidenceQuad,
    low: f64,
    high: f64,
) -> Result<DeviceOutcome, MetricsError> {
    if !(0.0 <= low && low <= high && high <= 1.0) {
        return Err(MetricsError::DeviceThresholds { low, high });
    }
    let pos_low = quad.dev_pos.cdf(low);
    let pos_high = quad.dev_pos.cdf(high);
    let neg_low = quad.dev_neg.cdf(low);
    let neg_high = quad.dev_neg.cdf(high);
    Ok(DeviceOutcome {
        true_pos: 1.0 - pos_high,
        false_neg: pos_low,
        uncertain_pos: pos_high - pos_low,
        false_pos: 1.0 - neg_high,
        true_neg: neg_low,
        uncertain_neg: neg_high - neg_low,
    })
}

pub fn server_outcomes(quad: &ConfidenceQuad, server: f64) -> Result<ServerOutcome, MetricsError> {
    if !(0.0..=1.0).contains(&server) {
        return Err(MetricsError::ServerThreshold(server));
    }
    let pos = quad.srv_pos.cdf(server);
    let neg = quad.srv_neg.cdf(server);
    Ok(ServerOutcome {
        true_pos: 1.0 - pos,
        false_neg: pos,
        false_pos: 1.0 - neg,
        true_neg: neg,
    })
}

/// Accuracy of the two-stage cooperative scheme.
pub fn accuracy_cooperative(dev: &DeviceOutcome, srv: &ServerOutcome) -> f64 {
    (dev.true_pos
        + dev.true_neg
        + dev.uncertain_pos * srv.true_pos
        + dev.uncertain_neg * srv.true_neg)
        / 2.0
}

/// Accuracy when every frame is decided on the device (`low == high`).
pub fn accuracy_device_centric(dev: &DeviceOutcome) -> f64 {
    debug_assert!(dev.uncertain_pos.abs() < 1e-12 && dev.uncertain_neg.abs() < 1e-12);
    (dev.true_pos + dev.true_neg) / 2.0
}

/// Accuracy when every frame is decided on the server.
pub fn accuracy_server_centric(srv: &ServerOutcome) -> f64 {
    (srv.true_pos + srv.true_neg) / 2.0
}

/// Single-threshold cascade: everything at or below `high` is offloaded.
///
/// Defined as the cooperative accuracy at `low = 0`; the offloaded negative
/// mass is `F_dev_neg(high)`.
pub fn accuracy_cascade(
    quad: &ConfidenceQuad,
    high: f64,
    server: f64,
) -> Result<f64, MetricsError> {
    let dev = device_outcomes(quad, 0.0, high)?;
    let srv = server_outcomes(quad, server)?;
    Ok(accuracy_cooperative(&dev, &srv))
}

/// `alpha`: probability that the device marks a frame uncertain.
pub fn uncertain_prob(dev: &DeviceOutcome) -> f64 {
    (dev.uncertain_pos + dev.uncertain_neg) / 2.0
}

/// `beta`: probability that the device marks a frame positive.
pub fn positive_prob(dev: &DeviceOutcome) -> f64 {
    (dev.true_pos + dev.false_pos) / 2.0
}

//! Mean end-to-end delay of the four inference strategies.
//!
//! All public quantities are in seconds, bits and bits per second. The only
//! place that converts dB/dBm into linear units is [`RadioParams::from_db`].

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("channel gain {index} is not finite")]
    Gain { index: usize },
    #[error("{what} must be non-negative and finite, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("backhaul rate must be positive, got {0}")]
    BackhaulRate(f64),
    #[error("{what}: expected {expected} entries, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}[{index}] = {value} outside [0, 1]")]
    Probability {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("time shares sum to {0}, more than 1")]
    ShareSum(f64),
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Uplink radio parameters, stored in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd_w_hz: f64,
    pub tx_power_w: f64,
    /// Linear power gains, one per device.
    pub channel_gains: Vec<f64>,
}

impl RadioParams {
    pub fn from_linear(
        bandwidth_hz: f64,
        noise_psd_w_hz: f64,
        tx_power_w: f64,
        channel_gains: Vec<f64>,
    ) -> Result<Self, DelayError> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(DelayError::Bandwidth(bandwidth_hz));
        }
        check_nonneg("noise psd", noise_psd_w_hz)?;
        check_nonneg("tx power", tx_power_w)?;
        if let Some(index) = channel_gains
            .iter()
            .position(|g| !g.is_finite() || *g < 0.0)
        {
            return Err(DelayError::Gain { index });
        }
        Ok(Self {
            bandwidth_hz,
            noise_psd_w_hz,
            tx_power_w,
            channel_gains,
        })
    }

    pub fn from_db(
        bandwidth_hz: f64,
        noise_dbm_hz: f64,
        tx_power_dbm: f64,
        gains_db: &[f64],
    ) -> Result<Self, DelayError> {
        if let Some(index) = gains_db
            .iter()
            .position(|g| g.is_nan() || *g == f64::INFINITY)
        {
            return Err(DelayError::Gain { index });
        }
        Self::from_linear(
            bandwidth_hz,
            dbm_to_watts(noise_dbm_hz),
            dbm_to_watts(tx_power_dbm),
            gains_db.iter().map(|&g| db_to_linear(g)).collect(),
        )
    }

    pub fn n_devices(&self) -> usize {
        self.channel_gains.len()
    }

    pub fn snr(&self, device: usize) -> f64 {
        self.tx_power_w * self.channel_gains[device] / (self.noise_psd_w_hz * self.bandwidth_hz)
    }

    /// Rate of device `device` when it owns the whole frame (`tau = 1`).
    pub fn full_rate(&self, device: usize) -> f64 {
        self.bandwidth_hz * (1.0 + self.snr(device)).log2()
    }
}

/// Shannon rate of a device holding a `tau` share of the TDMA frame.
pub fn shannon_rate(tau: f64, radio: &RadioParams, device: usize) -> f64 {
    tau * radio.full_rate(device)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backhaul {
    /// Traffic-proportional BS-to-server time at this wired rate.
    RateBps(f64),
    /// Constant BS-to-server time.
    FixedTime(f64),
}

/// Processing, inference and wired-link times.
///
/// `t_sc_tx_s` is the server-to-client message time (message size over the
/// wired client rate) folded into one constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeParams {
    pub t_pr_device_s: f64,
    pub t_inf_device_s: f64,
    /// Time of a single server inference.
    pub t_inf_server_s: f64,
    pub t_pr_server_s: f64,
    pub t_sc_tx_s: f64,
    pub backhaul: Backhaul,
}

impl ComputeParams {
    pub fn validate(&self) -> Result<(), DelayError> {
        check_nonneg("device processing time", self.t_pr_device_s)?;
        check_nonneg("device inference time", self.t_inf_device_s)?;
        check_nonneg("server inference time", self.t_inf_server_s)?;
        check_nonneg("server processing time", self.t_pr_server_s)?;
        check_nonneg("server-to-client time", self.t_sc_tx_s)?;
        match self.backhaul {
            Backhaul::RateBps(r) if !(r > 0.0 && r.is_finite()) => Err(DelayError::BackhaulRate(r)),
            Backhaul::FixedTime(t) => check_nonneg("backhaul time", t),
            _ => Ok(()),
        }
    }
}

/// Inference time of a network of `flops` operations on a processor with
/// `cycles_per_flop` at `clock_hz`.
pub fn inference_time(flops: f64, cycles_per_flop: f64, clock_hz: f64) -> f64 {
    flops * cycles_per_flop / clock_hz
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub fps: f64,
    pub image_bits: u64,
    pub message_bits: u64,
}

impl TrafficParams {
    /// Mean offered uplink load of one device, bits per second.
    pub fn load(&self, alpha: f64, beta: f64) -> f64 {
        self.fps * (alpha * self.image_bits as f64 + beta * self.message_bits as f64)
    }
}

/// Per-device TDMA time shares.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAllocation(pub Vec<f64>);

impl TimeAllocation {
    pub fn new(tau: Vec<f64>) -> Result<Self, DelayError> {
        for (index, &value) in tau.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DelayError::Probability {
                    what: "tau",
                    index,
                    value,
                });
            }
        }
        let sum: f64 = tau.iter().sum();
        if sum > 1.0 + 1e-9 {
            return Err(DelayError::ShareSum(sum));
        }
        Ok(Self(tau))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Mean delay split by component. `total` is infinite when some device has
/// traffic but no airtime.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelayBreakdown {
    pub t_device_proc: f64,
    pub t_device_inf: f64,
    pub t_db_tx: f64,
    pub t_bs_tx: f64,
    pub t_server_inf: f64,
    pub t_server_proc: f64,
    pub t_sc_tx: f64,
    pub total: f64,
}

impl DelayBreakdown {
    pub fn components(&self) -> [f64; 7] {
        [
            self.t_device_proc,
            self.t_device_inf,
            self.t_db_tx,
            self.t_bs_tx,
            self.t_server_inf,
            self.t_server_proc,
            self.t_sc_tx,
        ]
    }

    /// False when the allocation starves a device that has traffic.
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

fn check_nonneg(what: &'static str, value: f64) -> Result<(), DelayError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DelayError::Negative { what, value })
    }
}

fn check_probs(what: &'static str, v: &[f64], n: usize) -> Result<(), DelayError> {
    if v.len() != n {
        return Err(DelayError::Length {
            what,
            expected: n,
            got: v.len(),
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(DelayError::Probability { what, index, value });
        }
    }
    Ok(())
}

/// Sum of the traffic-independent components.
pub fn fixed_delay(compute: &ComputeParams, include_device_inference: bool) -> f64 {
    let device_inf = if include_device_inference {
        compute.t_inf_device_s
    } else {
        0.0
    };
    let backhaul = match compute.backhaul {
        Backhaul::FixedTime(t) => t,
        Backhaul::RateBps(_) => 0.0,
    };
    compute.t_pr_device_s + device_inf + compute.t_pr_server_s + compute.t_sc_tx_s + backhaul
}

/// Wireless uplink time for a device with offered `load` at share `tau`;
/// zero load costs nothing even without airtime.
pub fn uplink_time(load: f64, tau: f64, full_rate: f64) -> f64 {
    if load == 0.0 {
        0.0
    } else if tau <= 0.0 || full_rate <= 0.0 {
        f64::INFINITY
    } else {
        load / (tau * full_rate)
    }
}

fn assemble(
    traffic: &TrafficParams,
    compute: &ComputeParams,
    radio: &RadioParams,
    alpha: &[f64],
    beta: &[f64],
    tau: &TimeAllocation,
    include_device_inference: bool,
) -> Result<DelayBreakdown, DelayError> {
    let n = radio.n_devices();
    check_probs("alpha", alpha, n)?;
    check_probs("beta", beta, n)?;
    if tau.len() != n {
        return Err(DelayError::Length {
            what: "tau",
            expected: n,
            got: tau.len(),
        });
    }
    let mut t_db_tx = 0.0;
    let mut total_load = 0.0;
    let mut offloads = 0.0;
    for i in 0..n {
        let load = traffic.load(alpha[i], beta[i]);
        t_db_tx += uplink_time(load, tau.0[i], radio.full_rate(i));
        total_load += load;
        offloads += alpha[i];
    }
    let t_bs_tx = match compute.backhaul {
        Backhaul::RateBps(rate) => total_load / rate,
        Backhaul::FixedTime(t) => t,
    };
    let mut b = DelayBreakdown {
        t_device_proc: compute.t_pr_device_s,
        t_device_inf: if include_device_inference {
            compute.t_inf_device_s
        } else {
            0.0
        },
        t_db_tx,
        t_bs_tx,
        t_server_inf: offloads * compute.t_inf_server_s,
        t_server_proc: compute.t_pr_server_s,
        t_sc_tx: compute.t_sc_tx_s,
        total: 0.0,
    };
    b.total = b.components().iter().sum();
    Ok(b)
}

/// Mean delay of the cooperative scheme for offload probabilities `alpha`
/// and message probabilities `beta`.
pub fn delay_cooperative(
    traffic: &TrafficParams,
    compute: &ComputeParams,
    radio: &RadioParams,
    alpha: &[f64],
    beta: &[f64],
    tau: &TimeAllocation,
) -> Result<DelayBreakdown, DelayError> {
    assemble(traffic, compute, radio, alpha, beta, tau, true)
}

pub fn delay_device_centric(
    traffic: &TrafficParams,
    compute: &ComputeParams,
    radio: &RadioParams,
    beta: &[f64],
    tau: &TimeAllocation,
) -> Result<DelayBreakdown, DelayError> {
    let alpha = vec![0.0; beta.len()];
    assemble(traffic, compute, radio, &alpha, beta, tau, true)
}

/// Every device ships its image and the server runs every inference; no
/// inference time is charged on the devices.
pub fn delay_server_centric(
    traffic: &TrafficParams,
    compute: &ComputeParams,
    radio: &RadioParams,
    tau: &TimeAllocation,
) -> Result<DelayBreakdown, DelayError> {
    let n = radio.n_devices();
    assemble(
        traffic,
        compute,
        radio,
        &vec![1.0; n],
        &vec![0.0; n],
        tau,
        false,
    )
}

pub fn delay_cascade(
    traffic: &TrafficParams,
    compute: &ComputeParams,
    radio: &RadioParams,
    alpha: &[f64],
    tau: &TimeAllocation,
) -> Result<DelayBreakdown, DelayError> {
    let beta: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
    assemble(traffic, compute, radio, alpha, &beta, tau, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_defaults(gains_db: &[f64]) -> (TrafficParams, ComputeParams, RadioParams) {
        (
            TrafficParams {
                fps: 2.0,
                image_bits: 32 * 1024 * 8,
                message_bits: 68 * 8,
            },
            ComputeParams {
                t_pr_device_s: 0.010,
                t_inf_device_s: 0.100,
                t_inf_server_s: 0.020,
                t_pr_server_s: 0.005,
                t_sc_tx_s: 0.020,
                backhaul: Backhaul::FixedTime(0.0005),
            },
            RadioParams::from_db(1e6, -165.0, 30.0, gains_db).unwrap(),
        )
    }

    #[test]
    fn shannon_rate_hand_value() {
        let (_, _, radio) = table_defaults(&[-100.0]);
        // P = 1 W, g = 1e-10, N0 = 10^-19.5 W/Hz, W = 1e6 Hz
        let snr = 1.0 * 1e-10 / (10f64.powf(-19.5) * 1e6);
        assert!((snr - 3162.2776601683795).abs() < 1e-6);
        let expected = 1e6 * (1.0 + snr).log2();
        let r = shannon_rate(1.0, &radio, 0);
        assert!((r - expected).abs() / expected < 1e-12);
        assert!((r - 1.1627e7).abs() < 1e4, "r = {r}");
        assert!((shannon_rate(0.5, &radio, 0) - r / 2.0).abs() < 1e-6);
        let weak = RadioParams::from_db(1e6, -165.0, 30.0, &[-400.0]).unwrap();
        assert!(shannon_rate(1.0, &weak, 0) < 1e-15);
    }

    #[test]
    fn db_and_linear_agree() {
        let a = RadioParams::from_db(2e6, -170.0, 23.0, &[-90.0, -110.0]).unwrap();
        let b = RadioParams::from_linear(
            2e6,
            1e-3 * 10f64.powf(-17.0),
            1e-3 * 10f64.powf(2.3),
            vec![1e-9, 1e-11],
        )
        .unwrap();
        for i in 0..2 {
            let (ra, rb) = (a.full_rate(i), b.full_rate(i));
            assert!((ra - rb).abs() / rb < 1e-9);
        }
    }

    #[test]
    fn no_traffic_is_constant() {
        let (t, c, r) = table_defaults(&[-100.0, -100.0]);
        let tau = TimeAllocation::uniform(2);
        let d = delay_cooperative(&t, &c, &r, &[0.0, 0.0], &[0.0, 0.0], &tau).unwrap();
        assert!((d.total - (0.01 + 0.1 + 0.005 + 0.02 + 0.0005)).abs() < 1e-15);
        assert_eq!(d.t_db_tx, 0.0);
    }

    #[test]
    fn single_device_component_oracle() {
        let (t, c, r) = table_defaults(&[-100.0]);
        let tau = TimeAllocation::new(vec![1.0]).unwrap();
        let d = delay_cooperative(&t, &c, &r, &[0.6], &[0.2], &tau).unwrap();
        let snr = 1e-10 / (10f64.powf(-19.5) * 1e6);
        let rate = 1e6 * (1.0 + snr).log2();
        let uplink = 2.0 * (0.6 * 262_144.0 + 0.2 * 544.0) / rate;
        let expected = 0.01 + 0.1 + uplink + 0.0005 + 0.6 * 0.02 + 0.005 + 0.02;
        assert!((d.total - expected).abs() < 1e-12);
        let sum: f64 = d.components().iter().sum();
        assert!((sum - d.total).abs() < 1e-12);
    }

    #[test]
    fn image_part_is_linear_in_size() {
        let (mut t, c, r) = table_defaults(&[-100.0]);
        let tau = TimeAllocation::new(vec![1.0]).unwrap();
        let base = delay_cooperative(&t, &c, &r, &[0.5], &[0.0], &tau).unwrap();
        t.image_bits *= 2;
        let doubled = delay_cooperative(&t, &c, &r, &[0.5], &[0.0], &tau).unwrap();
        assert!((doubled.t_db_tx - 2.0 * base.t_db_tx).abs() < 1e-15);
    }

    #[test]
    fn starved_device_is_infinite() {
        let (t, c, r) = table_defaults(&[-100.0, -100.0]);
        let tau = TimeAllocation::new(vec![1.0, 0.0]).unwrap();
        let d = delay_cooperative(&t, &c, &r, &[0.5, 0.5], &[0.1, 0.1], &tau).unwrap();
        assert!(!d.is_finite());
        let idle = delay_cooperative(&t, &c, &r, &[0.5, 0.0], &[0.1, 0.0], &tau).unwrap();
        assert!(idle.is_finite());
    }

    #[test]
    fn strategy_reductions() {
        let (t, c, r) = table_defaults(&[-95.0, -105.0, -100.0, -98.0]);
        let tau = TimeAllocation::new(vec![0.3, 0.3, 0.2, 0.2]).unwrap();
        let beta = [0.4, 0.5, 0.45, 0.3];
        let dev = delay_device_centric(&t, &c, &r, &beta, &tau).unwrap();
        let coop = delay_cooperative(&t, &c, &r, &[0.0; 4], &beta, &tau).unwrap();
        assert_eq!(dev, coop);

        let srv = delay_server_centric(&t, &c, &r, &tau).unwrap();
        let full = delay_cooperative(&t, &c, &r, &[1.0; 4], &[0.0; 4], &tau).unwrap();
        assert!((srv.total - (full.total - c.t_inf_device_s)).abs() < 1e-12);
        assert_eq!(srv.t_device_inf, 0.0);

        let alpha = [0.2, 0.7, 0.0, 1.0];
        let cas = delay_cascade(&t, &c, &r, &alpha, &tau).unwrap();
        let b: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
        assert_eq!(
            cas,
            delay_cooperative(&t, &c, &r, &alpha, &b, &tau).unwrap()
        );
    }

    #[test]
    fn device_centric_message_only() {
        let (t, c, r) = table_defaults(&[-100.0; 4]);
        let tau = TimeAllocation::uniform(4);
        let d = delay_device_centric(&t, &c, &r, &[1.0; 4], &tau).unwrap();
        let rate = r.full_rate(0) / 4.0;
        assert!((d.t_db_tx - 4.0 * 2.0 * 544.0 / rate).abs() < 1e-15);
        let none = delay_device_centric(&t, &c, &r, &[0.0; 4], &tau).unwrap();
        assert_eq!(none.t_db_tx, 0.0);
    }

    #[test]
    fn server_centric_exceeds_budget_at_defaults() {
        let (t, c, r) = table_defaults(&[-100.0; 4]);
        let d = delay_server_centric(&t, &c, &r, &TimeAllocation::uniform(4)).unwrap();
        let rate = r.full_rate(0) / 4.0;
        let expected = 0.01 + 4.0 * 2.0 * 262_144.0 / rate + 0.0005 + 4.0 * 0.02 + 0.005 + 0.02;
        assert!((d.total - expected).abs() < 1e-12);
        assert!(d.total > 0.5);
    }

    #[test]
    fn server_centric_linear_in_devices() {
        let (t, mut c, r1) = table_defaults(&[-100.0]);
        c.backhaul = Backhaul::RateBps(1e8);
        let r2 = RadioParams::from_db(1e6, -165.0, 30.0, &[-100.0, -100.0]).unwrap();
        let one =
            delay_server_centric(&t, &c, &r1, &TimeAllocation::new(vec![1.0]).unwrap()).unwrap();
        let two = delay_server_centric(&t, &c, &r2, &TimeAllocation::uniform(2)).unwrap();
        assert!((two.t_bs_tx - 2.0 * one.t_bs_tx).abs() < 1e-15);
        assert!((two.t_server_inf - 2.0 * one.t_server_inf).abs() < 1e-15);
        // Halved airtime per device doubles each uplink term.
        assert!((two.t_db_tx - 4.0 * one.t_db_tx).abs() < 1e-12 * one.t_db_tx);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (t, c, r) = table_defaults(&[-100.0]);
        let tau = TimeAllocation::uniform(1);
        assert!(delay_cooperative(&t, &c, &r, &[1.5], &[0.0], &tau).is_err());
        assert!(delay_cooperative(&t, &c, &r, &[0.5, 0.5], &[0.0], &tau).is_err());
        assert!(TimeAllocation::new(vec![0.7, 0.7]).is_err());
        assert!(RadioParams::from_db(0.0, -165.0, 30.0, &[-100.0]).is_err());
    }

    #[test]
    fn flops_collapse_to_time() {
        assert!((inference_time(8.7e9, 1.0, 87e9) - 0.1).abs() < 1e-15);
    }
}

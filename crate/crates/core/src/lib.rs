//! Analytic model, optimizer and Monte Carlo simulator for cooperative
//! device/server 3D pose estimation with two confidence thresholds.

pub mod confidence;
pub mod delay;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod scenario;
pub mod sim;

pub use confidence::{ConfidenceError, ConfidenceModel, ConfidenceQuad};
pub use delay::{
    Backhaul, ComputeParams, DelayBreakdown, DelayError, RadioParams, TimeAllocation, TrafficParams,
};
pub use geometry::{CameraProjection, GeometryError, Observation2D, Pose3D};
pub use metrics::{DeviceOutcome, DeviceThresholds, MetricsError, ServerOutcome, ThresholdSet};
pub use optimizer::{
    evaluate, evaluate_strategy, exhaustive_search, optimize, optimize_strategy, solve_tau,
    solve_thresholds, Evaluation, IterationRecord, OptimizerConfig, OptimizerError, Solution,
    Strategy, TauSolution,
};
pub use scenario::{NoiseModel, Scenario, ScenarioError, ScenarioParams};
pub use sim::{Lemma1Report, SimError, SimResult, SweepAxis, SweepRow};

/// Formats a float with 9 significant digits, `%g` style.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::format_float;

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(123456789.0), "123456789");
        assert_eq!(format_float(1234567891.0), "1.23456789e9");
        assert_eq!(format_float(-2.5e-7), "-2.5e-7");
        assert_eq!(format_float(0.1355), "0.1355");
        assert_eq!(format_float(f64::NAN), "nan");
        assert_eq!(format_float(9.99999999999), "10");
    }
}

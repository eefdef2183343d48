//! Confidence-score distributions.
//!
//! Every accuracy and traffic formula in the crate is driven by four score
//! distributions: the device model's scores on positive and negative images,
//! and the server model's scores on the same two classes. A distribution is
//! either a parametric beta law or an empirical sample set measured from a
//! real model.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::Distribution;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfidenceError {
    #[error(
        "beta parameters must be finite and strictly positive (got alpha={alpha}, beta={beta})"
    )]
    InvalidBeta { alpha: f64, beta: f64 },
    #[error("empirical model needs at least one sample")]
    Empty,
    #[error("sample {index} is {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: cannot parse {text:?} as a confidence value")]
    Parse { line: usize, text: String },
    #[error("line {line}: value {value} outside [0, 1]")]
    LineOutOfRange { line: usize, value: f64 },
    #[error("moment fit needs at least two samples with positive variance")]
    Degenerate,
}

#[derive(Debug, Clone)]
enum Kind {
    Beta {
        alpha: f64,
        beta: f64,
        sampler: rand_distr::Beta<f64>,
    },
    Empirical(Vec<f64>),
}

/// A score distribution supported on `[0, 1]`.
///
/// Models are validated at construction and immutable afterwards, so `cdf`
/// and `sample` never fail.
#[derive(Debug, Clone)]
pub struct ConfidenceModel {
    kind: Kind,
}

impl ConfidenceModel {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self, ConfidenceError> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(ConfidenceError::InvalidBeta { alpha, beta });
        }
        let sampler = rand_distr::Beta::new(alpha, beta)
            .map_err(|_| ConfidenceError::InvalidBeta { alpha, beta })?;
        Ok(Self {
            kind: Kind::Beta {
                alpha,
                beta,
                sampler,
            },
        })
    }

    /// Builds an empirical model; the samples are validated and sorted.
    pub fn empirical(samples: Vec<f64>) -> Result<Self, ConfidenceError> {
        fit_empirical(&samples)
    }

    /// `P(C <= x)`. Arguments outside `[0, 1]` are clamped to the support.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match &self.kind {
            Kind::Beta { alpha, beta, .. } => {
                statrs::function::beta::beta_reg(*alpha, *beta, x).clamp(0.0, 1.0)
            }
            Kind::Empirical(sorted) => {
                let below = sorted.partition_point(|&s| s <= x);
                below as f64 / sorted.len() as f64
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            Kind::Beta { alpha, beta, .. } => alpha / (alpha + beta),
            Kind::Empirical(sorted) => sorted.iter().sum::<f64>() / sorted.len() as f64,
        }
    }

    /// Draws a single score.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Beta { sampler, .. } => sampler.sample(rng).clamp(0.0, 1.0),
            Kind::Empirical(sorted) => sorted[rng.random_range(0..sorted.len())],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// Sorted samples of an empirical model, `None` for parametric ones.
    pub fn samples(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Empirical(sorted) => Some(sorted),
            Kind::Beta { .. } => None,
        }
    }

    pub fn beta_params(&self) -> Option<(f64, f64)> {
        match &self.kind {
            Kind::Beta { alpha, beta, .. } => Some((*alpha, *beta)),
            Kind::Empirical(_) => None,
        }
    }

    /// True when the model puts no mass on isolated points.
    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, Kind::Beta { .. })
    }
}

impl PartialEq for ConfidenceModel {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (
                Kind::Beta { alpha, beta, .. },
                Kind::Beta {
                    alpha: a2,
                    beta: b2,
                    ..
                },
            ) => alpha == a2 && beta == b2,
            (Kind::Empirical(a), Kind::Empirical(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for ConfidenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Beta { alpha, beta, .. } => write!(f, "beta({alpha},{beta})"),
            Kind::Empirical(s) => write!(f, "empirical(n={})", s.len()),
        }
    }
}

/// The four distributions that parameterize one device/server pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceQuad {
    pub dev_pos: ConfidenceModel,
    pub dev_neg: ConfidenceModel,
    pub srv_pos: ConfidenceModel,
    pub srv_neg: ConfidenceModel,
}

impl ConfidenceQuad {
    /// Illustrative defaults: the server laws are pushed further toward both
    /// ends of `[0, 1]` than the device laws. Not fitted to any measured data.
    pub fn illustrative() -> Self {
        Self {
            dev_pos: ConfidenceModel::beta(6.0, 2.0).expect("valid"),
            dev_neg: ConfidenceModel::beta(2.0, 6.0).expect("valid"),
            srv_pos: ConfidenceModel::beta(12.0, 2.0).expect("valid"),
            srv_neg: ConfidenceModel::beta(2.0, 12.0).expect("valid"),
        }
    }
}

impl Default for ConfidenceQuad {
    fn default() -> Self {
        Self::illustrative()
    }
}

/// Empirical model whose CDF is the right-continuous order-statistic step
/// function of `samples`.
pub fn fit_empirical(samples: &[f64]) -> Result<ConfidenceModel, ConfidenceError> {
    if samples.is_empty() {
        return Err(ConfidenceError::Empty);
    }
    if let Some((index, &value)) = samples
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ConfidenceError::OutOfRange { index, value });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ConfidenceModel {
        kind: Kind::Empirical(sorted),
    })
}

/// Method-of-moments beta fit: returns `(alpha, beta)`.
pub fn fit_beta_moments(samples: &[f64]) -> Result<(f64, f64), ConfidenceError> {
    if samples.len() < 2 {
        return Err(ConfidenceError::Degenerate);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 || mean <= 0.0 || mean >= 1.0 {
        return Err(ConfidenceError::Degenerate);
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    if common <= 0.0 {
        return Err(ConfidenceError::Degenerate);
    }
    Ok((mean * common, (1.0 - mean) * common))
}

/// Parses a sample file: one value per line, optional `confidence` header,
/// LF or CRLF endings. Blank lines are ignored.
pub fn parse_samples(text: &str) -> Result<Vec<f64>, ConfidenceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line == "confidence") {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| ConfidenceError::Parse {
            line: i + 1,
            text: line.to_string(),
        })?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ConfidenceError::LineOutOfRange { line: i + 1, value });
        }
        out.push(value);
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<f64>, ConfidenceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ConfidenceError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_samples(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_edges() {
        let m = ConfidenceModel::beta(2.0, 5.0).unwrap();
        assert_eq!(m.cdf(0.0), 0.0);
        assert_eq!(m.cdf(1.0), 1.0);
        let e = fit_empirical(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(e.cdf(0.0), 0.0);
        assert_eq!(e.cdf(1.0), 1.0);
    }

    #[test]
    fn empirical_cdf_counts() {
        let e = fit_empirical(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        let samples = [0.2, 0.4, 0.6, 0.8];
        for x in [0.1, 0.2, 0.35, 0.5, 0.6, 0.79, 0.8] {
            let count = samples.iter().filter(|&&s| s <= x).count() as f64 / 4.0;
            assert_eq!(e.cdf(x), count, "x={x}");
        }
        assert_eq!(e.cdf(0.5), 0.5);
    }

    #[test]
    fn uniform_beta_cdf_is_identity() {
        let m = ConfidenceModel::beta(1.0, 1.0).unwrap();
        for x in [0.1, 0.2, 0.3, 0.8] {
            assert!((m.cdf(x) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(ConfidenceModel::beta(0.0, 1.0).is_err());
        assert!(ConfidenceModel::beta(1.0, -2.0).is_err());
        assert!(ConfidenceModel::beta(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn fit_sorts_and_validates() {
        let m = fit_empirical(&[0.9, 0.1]).unwrap();
        assert_eq!(m.samples().unwrap(), &[0.1, 0.9]);
        assert_eq!(fit_empirical(&[0.5]).unwrap().samples().unwrap(), &[0.5]);
        assert_eq!(fit_empirical(&[]).unwrap_err(), ConfidenceError::Empty);
        assert_eq!(
            fit_empirical(&[0.3, 1.2]).unwrap_err(),
            ConfidenceError::OutOfRange {
                index: 1,
                value: 1.2
            }
        );
    }

    #[test]
    fn sampling_is_seeded() {
        let m = ConfidenceModel::beta(1.0, 1.0).unwrap();
        let a = m.sample(&mut ChaCha8Rng::seed_from_u64(7), 4);
        let b = m.sample(&mut ChaCha8Rng::seed_from_u64(7), 4);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        let atom = fit_empirical(&[0.3]).unwrap();
        assert_eq!(
            atom.sample(&mut ChaCha8Rng::seed_from_u64(1), 3),
            vec![0.3, 0.3, 0.3]
        );
    }

    #[test]
    fn beta_sample_mean() {
        let m = ConfidenceModel::beta(2.0, 5.0).unwrap();
        let n = 100_000;
        let xs = m.sample(&mut ChaCha8Rng::seed_from_u64(11), n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        // var of beta(2,5) = ab / ((a+b)^2 (a+b+1)) = 10 / (49 * 8)
        let stderr = (10.0 / (49.0 * 8.0) / n as f64).sqrt();
        assert!((mean - 2.0 / 7.0).abs() < 3.0 * stderr, "mean={mean}");
    }

    #[test]
    fn fitted_cdf_tracks_source() {
        let src = ConfidenceModel::beta(8.0, 2.0).unwrap();
        let draws = src.sample(&mut ChaCha8Rng::seed_from_u64(3), 10_000);
        let fitted = fit_empirical(&draws).unwrap();
        assert!((fitted.cdf(0.8) - src.cdf(0.8)).abs() < 0.02);
    }

    #[test]
    fn parse_sample_files() {
        assert_eq!(parse_samples("0.1\n0.9\n").unwrap(), vec![0.1, 0.9]);
        assert_eq!(parse_samples("confidence\n0.5\n").unwrap(), vec![0.5]);
        assert_eq!(parse_samples("0.25\r\n0.75\r\n").unwrap(), vec![0.25, 0.75]);
        assert_eq!(
            parse_samples("0.5\nxyz\n").unwrap_err(),
            ConfidenceError::Parse {
                line: 2,
                text: "xyz".into()
            }
        );
        assert!(matches!(
            parse_samples("0.5\n1.5\n").unwrap_err(),
            ConfidenceError::LineOutOfRange { line: 2, .. }
        ));
    }

    #[test]
    fn moment_fit_recovers_parameters() {
        let src = ConfidenceModel::beta(3.0, 7.0).unwrap();
        let draws = src.sample(&mut ChaCha8Rng::seed_from_u64(5), 200_000);
        let (a, b) = fit_beta_moments(&draws).unwrap();
        assert!((a - 3.0).abs() < 0.1, "a={a}");
        assert!((b - 7.0).abs() < 0.25, "b={b}");
    }
}

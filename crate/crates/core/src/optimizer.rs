//! Joint optimization of confidence thresholds and TDMA time shares.
//!
//! The problem is split in two and solved alternately:
//!
//! * with thresholds fixed, the time shares minimize the mean delay; this is
//!   convex and is solved through its Lagrange dual (stationarity gives a
//!   closed form for each share, the multipliers follow projected
//!   subgradient steps);
//! * with time shares fixed, the thresholds maximize the summed accuracy
//!   under the delay budget by a greedy search on a uniform grid: first the
//!   device pair `(low, high)` with the server threshold held, then the
//!   server threshold, repeated until nothing moves.
//!
//! [`exhaustive_search`] enumerates the whole grid jointly and is kept as a
//! validation oracle for small instances.

use std::time::Instant;

use thiserror::Error;

use crate::delay::{self, uplink_time, Backhaul, DelayBreakdown, DelayError, TimeAllocation};
use crate::metrics::{
    self, accuracy_cooperative, accuracy_server_centric, DeviceThresholds, MetricsError,
    ThresholdSet,
};
use crate::scenario::Scenario;

const ACC_TOL: f64 = 1e-12;
const DELAY_TOL: f64 = 1e-12;
/// Floor for the sum-share multiplier; the share formula is singular at 0.
const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("exhaustive search would visit {count} combinations, budget is {budget}")]
    TooManyCombinations { count: f64, budget: f64 },
    #[error("expected {expected} per-device entries, got {got}")]
    DeviceCount { expected: usize, got: usize },
}

/// The four inference strategies. All of them are the same two-threshold
/// pipeline restricted to a subset of the threshold space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// `low == high`: nothing is offloaded.
    DeviceCentric,
    /// Every frame goes to the server; devices run no inference.
    ServerCentric,
    /// `low == 0`: everything not confidently positive is offloaded.
    Cascade,
    /// The full two-threshold scheme.
    Cooperative,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::DeviceCentric,
        Strategy::ServerCentric,
        Strategy::Cascade,
        Strategy::Cooperative,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::DeviceCentric => "device",
            Strategy::ServerCentric => "server",
            Strategy::Cascade => "cascade",
            Strategy::Cooperative => "proposed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    fn charges_device_inference(&self) -> bool {
        !matches!(self, Strategy::ServerCentric)
    }

    fn allows(&self, low_idx: usize, high_idx: usize, last: usize) -> bool {
        match self {
            Strategy::DeviceCentric => low_idx == high_idx,
            Strategy::ServerCentric => low_idx == 0 && high_idx == last,
            Strategy::Cascade => low_idx == 0,
            Strategy::Cooperative => low_idx <= high_idx,
        }
    }

    /// Starting point of the alternating search: every threshold at 0.5,
    /// projected onto the strategy's threshold subspace.
    pub fn initial_thresholds(&self, n: usize) -> ThresholdSet {
        let t = match self {
            Strategy::DeviceCentric | Strategy::Cooperative => DeviceThresholds {
                low: 0.5,
                high: 0.5,
                server: 0.5,
            },
            Strategy::Cascade => DeviceThresholds {
                low: 0.0,
                high: 0.5,
                server: 0.5,
            },
            Strategy::ServerCentric => DeviceThresholds {
                low: 0.0,
                high: 1.0,
                server: 0.5,
            },
        };
        ThresholdSet::uniform(n, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Step size of the delay multiplier.
    pub kappa1: f64,
    /// Step size of the share-sum multiplier.
    pub kappa2: f64,
    /// Geometric decay applied to both step sizes each inner iteration.
    pub step_decay: f64,
    pub epsilon: f64,
    /// Points per threshold axis on `[0, 1]`.
    pub grid_points: usize,
    pub max_inner_iters: usize,
    pub max_outer_iters: usize,
    /// Cap on greedy rounds inside one threshold search.
    pub max_threshold_rounds: usize,
    /// Guard for [`exhaustive_search`].
    pub combination_budget: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kappa1: 0.1,
            kappa2: 0.1,
            step_decay: 0.99,
            epsilon: 1e-6,
            grid_points: 101,
            max_inner_iters: 10_000,
            max_outer_iters: 50,
            max_threshold_rounds: 100,
            combination_budget: 1e8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let positive = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("step_decay", self.step_decay),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizerError::Config(format!("{name} must be positive")));
            }
        }
        if self.step_decay > 1.0 {
            return Err(OptimizerError::Config(
                "step_decay must not exceed 1".into(),
            ));
        }
        if self.grid_points < 2 {
            return Err(OptimizerError::Config(
                "grid_points must be at least 2".into(),
            ));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 || self.max_threshold_rounds == 0
        {
            return Err(OptimizerError::Config(
                "iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of the time-share subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSolution {
    pub tau: TimeAllocation,
    pub lambda: f64,
    pub mu: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One outer iteration of the alternating search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub sum_accuracy: f64,
    pub delay_s: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Greedy rounds used by the threshold search.
    pub threshold_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub strategy: Strategy,
    pub thresholds: ThresholdSet,
    pub tau: TimeAllocation,
    pub sum_accuracy: f64,
    pub mean_delay_s: f64,
    pub delay_breakdown: DelayBreakdown,
    pub outer_iterations: usize,
    pub feasible: bool,
    /// Smallest mean delay reachable on the grid with the final shares.
    pub min_achievable_delay_s: f64,
    /// Summed accuracy after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub diagnostics: Vec<IterationRecord>,
    pub tau_converged: bool,
    /// Grid points (or combinations) evaluated.
    pub evaluated_points: usize,
    pub elapsed_s: f64,
}

/// Accuracy and delay of one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sum_accuracy: f64,
    pub per_device_accuracy: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub breakdown: DelayBreakdown,
}

/// Uniform grid of `m` points on `[0, 1]`.
pub fn grid(m: usize) -> Vec<f64> {
    let last = (m - 1) as f64;
    (0..m).map(|i| i as f64 / last).collect()
}

fn check_len(expected: usize, got: usize) -> Result<(), OptimizerError> {
    if expected == got {
        Ok(())
    } else {
        Err(OptimizerError::DeviceCount { expected, got })
    }
}

/// Offload and message probabilities per device for a threshold set.
pub fn traffic_probabilities(
    scenario: &Scenario,
    strategy: Strategy,
    thresholds: &ThresholdSet,
) -> Result<(Vec<f64>, Vec<f64>), OptimizerError> {
    let n = scenario.n_devices();
    check_len(n, thresholds.len())?;
    if strategy == Strategy::ServerCentric {
        return Ok((vec![1.0; n], vec![0.0; n]));
    }
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    for (i, t) in thresholds.iter().enumerate() {
        let d = metrics::device_outcomes(scenario.quad(i), t.low, t.high)?;
        alpha.push(d.offload_prob());
        beta.push(d.message_prob());
    }
    Ok((alpha, beta))
}

/// Accuracy and delay breakdown of the cooperative scheme at `(thresholds, tau)`.
pub fn evaluate(
    scenario: &Scenario,
    thresholds: &ThresholdSet,
    tau: &TimeAllocation,
) -> Result<Evaluation, OptimizerError> {
    evaluate_strategy(scenario, Strategy::Cooperative, thresholds, tau)
}

/// Strategy-native evaluation: the server-centric strategy scores the server
/// alone and charges no device inference; the others use the cooperative
/// formulas.
pub fn evaluate_strategy(
    scenario: &Scenario,
    strategy: Strategy,
    thresholds: &ThresholdSet,
    tau: &TimeAllocation,
) -> Result<Evaluation, OptimizerError> {
    let n = scenario.n_devices();
    check_len(n, thresholds.len())?;
    check_len(n, tau.len())?;
    let mut per_device_accuracy = Vec::with_capacity(n);
    for (i, t) in thresholds.iter().enumerate() {
        t.validate()?;
        let quad = scenario.quad(i);
        let srv = metrics::server_outcomes(quad, t.server)?;
        let acc = if strategy == Strategy::ServerCentric {
            accuracy_server_centric(&srv)
        } else {
            let dev = metrics::device_outcomes(quad, t.low, t.high)?;
            accuracy_cooperative(&dev, &srv)
        };
        per_device_accuracy.push(acc);
    }
    let (alpha, beta) = traffic_probabilities(scenario, strategy, thresholds)?;
    let breakdown = if strategy == Strategy::ServerCentric {
        delay::delay_server_centric(&scenario.traffic, &scenario.compute, &scenario.radio, tau)?
    } else {
        delay::delay_cooperative(
            &scenario.traffic,
            &scenario.compute,
            &scenario.radio,
            &alpha,
            &beta,
            tau,
        )?
    };
    Ok(Evaluation {
        sum_accuracy: per_device_accuracy.iter().sum(),
        per_device_accuracy,
        alpha,
        beta,
        breakdown,
    })
}

/// Delay as a function of the time shares for fixed traffic:
/// `fixed + sum(per_device[i]) + sum(coeff[i] / tau[i])`.
struct DelayTerms {
    fixed: f64,
    per_device: Vec<f64>,
    loads: Vec<f64>,
    full_rates: Vec<f64>,
}

impl DelayTerms {
    fn new(scenario: &Scenario, strategy: Strategy, alpha: &[f64], beta: &[f64]) -> Self {
        let n = scenario.n_devices();
        let mut per_device = Vec::with_capacity(n);
        let mut loads = Vec::with_capacity(n);
        let mut full_rates = Vec::with_capacity(n);
        for i in 0..n {
            let load = scenario.traffic.load(alpha[i], beta[i]);
            per_device
                .push(backhaul_time(scenario, load) + alpha[i] * scenario.compute.t_inf_server_s);
            loads.push(load);
            full_rates.push(scenario.radio.full_rate(i));
        }
        Self {
            fixed: delay::fixed_delay(&scenario.compute, strategy.charges_device_inference()),
            per_device,
            loads,
            full_rates,
        }
    }

    fn delay(&self, tau: &[f64]) -> f64 {
        let mut d = self.fixed;
        for (i, &t) in tau.iter().enumerate() {
            d += self.per_device[i] + uplink_time(self.loads[i], t, self.full_rates[i]);
        }
        d
    }
}

fn backhaul_time(scenario: &Scenario, load: f64) -> f64 {
    match scenario.compute.backhaul {
        Backhaul::RateBps(rate) => load / rate,
        Backhaul::FixedTime(_) => 0.0,
    }
}

/// Minimizes the mean delay over the time shares for the cooperative
/// scheme at the given thresholds.
pub fn solve_tau(
    scenario: &Scenario,
    thresholds: &ThresholdSet,
    config: &OptimizerConfig,
) -> Result<TauSolution, OptimizerError> {
    solve_tau_for_strategy(scenario, Strategy::Cooperative, thresholds, config)
}

pub fn solve_tau_for_strategy(
    scenario: &Scenario,
    strategy: Strategy,
    thresholds: &ThresholdSet,
    config: &OptimizerConfig,
) -> Result<TauSolution, OptimizerError> {
    config.validate()?;
    let (alpha, beta) = traffic_probabilities(scenario, strategy, thresholds)?;
    let terms = DelayTerms::new(scenario, strategy, &alpha, &beta);
    Ok(dual_time_shares(&terms, scenario.d_req_s(), config))
}

/// Dual method for `min_tau delay(tau)` s.t. `delay <= d_req`,
/// `sum(tau) <= 1`, `0 <= tau <= 1`.
///
/// Stationarity of the Lagrangian gives
/// `tau_i = [sqrt((1 + lambda) c_i / mu)]_0^1` with `c_i = load_i / rate_i`;
/// the multipliers take projected subgradient steps. The coefficients are
/// rescaled by `(sum sqrt c_i)^2` so that `mu` is of order one for every
/// instance; the reported `mu` is mapped back to the original scale.
fn dual_time_shares(terms: &DelayTerms, d_req: f64, config: &OptimizerConfig) -> TauSolution {
    let n = terms.loads.len();
    let coeff: Vec<f64> = terms
        .loads
        .iter()
        .zip(&terms.full_rates)
        .map(|(&l, &r)| {
            if l == 0.0 {
                0.0
            } else if r > 0.0 {
                l / r
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let scale: f64 = coeff.iter().map(|c| c.sqrt()).sum::<f64>().powi(2);
    if scale == 0.0 || !scale.is_finite() {
        // No traffic (delay does not depend on tau) or a dead link.
        return TauSolution {
            tau: TimeAllocation::uniform(n),
            lambda: 0.0,
            mu: 0.0,
            iterations: 0,
            converged: scale == 0.0,
        };
    }
    let norm: Vec<f64> = coeff.iter().map(|c| c / scale).collect();

    let mut lambda = 0.0_f64;
    let mut mu = 1.0_f64;
    let (mut k1, mut k2) = (config.kappa1, config.kappa2);
    let mut tau = vec![0.0; n];
    let mut prev = vec![f64::NAN; n];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_inner_iters {
        iterations = it + 1;
        let m = mu.max(MU_FLOOR);
        for i in 0..n {
            tau[i] = ((1.0 + lambda) * norm[i] / m).sqrt().clamp(0.0, 1.0);
        }
        let delay = terms.delay(&tau);
        let share: f64 = tau.iter().sum();
        lambda = (lambda + k1 * (delay - d_req)).max(0.0);
        mu = (mu + k2 * (share - 1.0)).max(0.0);
        k1 *= config.step_decay;
        k2 *= config.step_decay;
        let change = tau
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if it > 0 && change < config.epsilon {
            converged = true;
            break;
        }
        prev.copy_from_slice(&tau);
    }
    // Primal recovery: delay is decreasing in every active share, so the
    // optimum uses the whole frame. Rescaling keeps the stationary ratios.
    let share: f64 = tau.iter().sum();
    if share > 0.0 {
        for t in &mut tau {
            *t = (*t / share).min(1.0);
        }
    }
    TauSolution {
        tau: TimeAllocation(tau),
        lambda,
        mu: mu.max(MU_FLOOR) * scale,
        iterations,
        converged,
    }
}

/// One admissible `(low, high)` grid pair of a device.
#[derive(Debug, Clone, Copy)]
struct PairOption {
    low_idx: usize,
    high_idx: usize,
    /// `TP + TN` of the device stage.
    kept: f64,
    up: f64,
    un: f64,
    alpha: f64,
    beta: f64,
    load: f64,
}

#[derive(Debug, Clone)]
struct DeviceTable {
    options: Vec<PairOption>,
    /// `(TP_s, TN_s)` per server-threshold grid index.
    server: Vec<(f64, f64)>,
    /// Option index by `low_idx * m + high_idx`.
    lookup: Vec<Option<usize>>,
}

impl DeviceTable {
    fn accuracy(&self, option: usize, server_idx: usize) -> f64 {
        let o = &self.options[option];
        let (tp, tn) = self.server[server_idx];
        (o.kept + o.up * tp + o.un * tn) / 2.0
    }

    fn best_server(&self, option: usize, current: Option<usize>) -> usize {
        let o = &self.options[option];
        let score = |s: usize| {
            let (tp, tn) = self.server[s];
            o.up * tp + o.un * tn
        };
        let mut best = current.unwrap_or(0);
        let mut best_score = score(best);
        for s in 0..self.server.len() {
            let v = score(s);
            if v > best_score + ACC_TOL {
                best = s;
                best_score = v;
            }
        }
        best
    }
}

struct SearchSpace {
    strategy: Strategy,
    grid: Vec<f64>,
    tables: Vec<DeviceTable>,
}

impl SearchSpace {
    fn new(scenario: &Scenario, strategy: Strategy, m: usize) -> Result<Self, OptimizerError> {
        let grid = grid(m);
        let last = m - 1;
        let n = scenario.n_devices();
        let mut tables: Vec<DeviceTable> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && std::sync::Arc::ptr_eq(&scenario.quads()[i], &scenario.quads()[0]) {
                tables.push(tables[0].clone());
                continue;
            }
            let quad = scenario.quad(i);
            let mut options = Vec::new();
            let mut lookup = vec![None; m * m];
            for li in 0..m {
                for hi in li..m {
                    if !strategy.allows(li, hi, last) {
                        continue;
                    }
                    let (kept, up, un, alpha, beta) = if strategy == Strategy::ServerCentric {
                        (0.0, 1.0, 1.0, 1.0, 0.0)
                    } else {
                        let d = metrics::device_outcomes(quad, grid[li], grid[hi])?;
                        (
                            d.true_pos + d.true_neg,
                            d.uncertain_pos,
                            d.uncertain_neg,
                            d.offload_prob(),
                            d.message_prob(),
                        )
                    };
                    lookup[li * m + hi] = Some(options.len());
                    options.push(PairOption {
                        low_idx: li,
                        high_idx: hi,
                        kept,
                        up,
                        un,
                        alpha,
                        beta,
                        load: scenario.traffic.load(alpha, beta),
                    });
                }
            }
            let server = grid
                .iter()
                .map(|&s| {
                    let o = metrics::server_outcomes(quad, s)?;
                    Ok((o.true_pos, o.true_neg))
                })
                .collect::<Result<Vec<_>, MetricsError>>()?;
            tables.push(DeviceTable {
                options,
                server,
                lookup,
            });
        }
        Ok(Self {
            strategy,
            grid,
            tables,
        })
    }

    fn m(&self) -> usize {
        self.grid.len()
    }

    fn nearest(&self, x: f64) -> usize {
        let last = (self.m() - 1) as f64;
        (x.clamp(0.0, 1.0) * last).round() as usize
    }

    /// Snaps a threshold set onto the grid and the strategy's subspace.
    fn snap(&self, thresholds: &ThresholdSet) -> Vec<(usize, usize)> {
        let last = self.m() - 1;
        thresholds
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut li = self.nearest(t.low);
                let mut hi = self.nearest(t.high).max(li);
                match self.strategy {
                    Strategy::DeviceCentric => li = hi,
                    Strategy::Cascade => li = 0,
                    Strategy::ServerCentric => {
                        li = 0;
                        hi = last;
                    }
                    Strategy::Cooperative => {}
                }
                let option =
                    self.tables[i].lookup[li * self.m() + hi].expect("snapped pair is admissible");
                (option, self.nearest(t.server))
            })
            .collect()
    }

    fn thresholds(&self, selection: &[(usize, usize)]) -> ThresholdSet {
        ThresholdSet(
            selection
                .iter()
                .enumerate()
                .map(|(i, &(o, s))| {
                    let opt = &self.tables[i].options[o];
                    DeviceThresholds {
                        low: self.grid[opt.low_idx],
                        high: self.grid[opt.high_idx],
                        server: self.grid[s],
                    }
                })
                .collect(),
        )
    }

    fn sum_accuracy(&self, selection: &[(usize, usize)]) -> f64 {
        selection
            .iter()
            .enumerate()
            .map(|(i, &(o, s))| self.tables[i].accuracy(o, s))
            .sum()
    }
}

/// Tie-break key: higher accuracy, then less offloading, then a narrower
/// uncertain band.
#[derive(Debug, Clone, Copy)]
struct Rank {
    acc: f64,
    alpha: f64,
    width: usize,
}

impl Rank {
    fn beats(&self, other: &Rank) -> bool {
        if self.acc > other.acc + ACC_TOL {
            return true;
        }
        if self.acc < other.acc - ACC_TOL {
            return false;
        }
        if self.alpha < other.alpha - ACC_TOL {
            return true;
        }
        if self.alpha > other.alpha + ACC_TOL {
            return false;
        }
        self.width < other.width
    }
}

/// Per-device delay contributions for fixed shares.
struct DeviceDelays {
    /// `delays[i][option]`
    delays: Vec<Vec<f64>>,
    budget: f64,
}

impl DeviceDelays {
    fn new(scenario: &Scenario, space: &SearchSpace, tau: &TimeAllocation) -> Self {
        let delays = space
            .tables
            .iter()
            .enumerate()
            .map(|(i, table)| {
                let rate = scenario.radio.full_rate(i);
                table
                    .options
                    .iter()
                    .map(|o| {
                        uplink_time(o.load, tau.0[i], rate)
                            + backhaul_time(scenario, o.load)
                            + o.alpha * scenario.compute.t_inf_server_s
                    })
                    .collect()
            })
            .collect();
        let fixed =
            delay::fixed_delay(&scenario.compute, space.strategy.charges_device_inference());
        Self {
            delays,
            budget: scenario.d_req_s() - fixed,
        }
    }

    fn total(&self, selection: &[(usize, usize)]) -> f64 {
        selection
            .iter()
            .enumerate()
            .map(|(i, &(o, _))| self.delays[i][o])
            .sum()
    }

    fn min_total(&self) -> f64 {
        self.delays
            .iter()
            .map(|d| d.iter().copied().fold(f64::INFINITY, f64::min))
            .sum()
    }
}

/// Outcome of one threshold search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub thresholds: ThresholdSet,
    pub sum_accuracy: f64,
    pub feasible: bool,
    pub rounds: usize,
    pub min_achievable_delay_s: f64,
    pub evaluated_points: usize,
}

struct Searcher<'a> {
    space: &'a SearchSpace,
    delays: &'a DeviceDelays,
    homogeneous: bool,
    evaluated: usize,
}

impl Searcher<'_> {
    fn rank(&self, device: usize, option: usize, server_idx: usize) -> Rank {
        let table = &self.space.tables[device];
        let o = &table.options[option];
        Rank {
            acc: table.accuracy(option, server_idx),
            alpha: o.alpha,
            width: o.high_idx - o.low_idx,
        }
    }

    /// Best option of `device` whose delay fits in `room`.
    fn best_within(&mut self, device: usize, server_idx: usize, room: f64) -> Option<usize> {
        let delays = &self.delays.delays[device];
        let mut best: Option<(usize, Rank)> = None;
        for (o, &d) in delays.iter().enumerate() {
            if d > room + DELAY_TOL {
                continue;
            }
            let r = self.rank(device, o, server_idx);
            if best.as_ref().is_none_or(|(_, b)| r.beats(b)) {
                best = Some((o, r));
            }
        }
        self.evaluated += delays.len();
        best.map(|(o, _)| o)
    }

    /// Coordinate ascent: each device in turn takes its best option within
    /// the budget left by the others. Never lowers the summed accuracy.
    fn polish(&mut self, selection: &mut [(usize, usize)]) {
        let n = selection.len();
        for _ in 0..4 * n + 4 {
            let mut changed = false;
            for i in 0..n {
                let others: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| self.delays.delays[j][selection[j].0])
                    .sum();
                let room = self.delays.budget - others;
                if let Some(o) = self.best_within(i, selection[i].1, room) {
                    if o != selection[i].0
                        && self.rank(i, o, selection[i].1).beats(&self.rank(
                            i,
                            selection[i].0,
                            selection[i].1,
                        ))
                    {
                        selection[i].0 = o;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Per-device choice maximizing `accuracy - price * delay`.
    fn priced(&mut self, selection: &[(usize, usize)], price: f64) -> Vec<(usize, usize)> {
        selection
            .iter()
            .enumerate()
            .map(|(i, &(_, s))| {
                let delays = &self.delays.delays[i];
                let mut best: Option<(usize, f64, f64, Rank)> = None;
                for (o, &d) in delays.iter().enumerate() {
                    if !d.is_finite() {
                        continue;
                    }
                    let r = self.rank(i, o, s);
                    let v = r.acc - price * d;
                    let better = match &best {
                        None => true,
                        Some((_, bv, bd, br)) => {
                            v > bv + ACC_TOL
                                || ((v - bv).abs() <= ACC_TOL
                                    && (d < *bd - DELAY_TOL
                                        || ((d - bd).abs() <= DELAY_TOL && r.beats(br))))
                        }
                    };
                    if better {
                        best = Some((o, v, d, r));
                    }
                }
                self.evaluated += delays.len();
                (best.map_or(0, |b| b.0), s)
            })
            .collect()
    }

    /// Device-pair step with server thresholds held.
    fn pair_step(&mut self, current: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let n = current.len();
        let budget = self.delays.budget;
        let mut candidates: Vec<Vec<(usize, usize)>> = Vec::new();

        let symmetric = self.homogeneous && current.iter().all(|&(_, s)| s == current[0].1);
        if symmetric {
            // Identical devices: scan one pair and broadcast it.
            let s = current[0].1;
            let delays = &self.delays.delays;
            let mut best: Option<(usize, Rank)> = None;
            for o in 0..delays[0].len() {
                let total: f64 = delays.iter().take(n).map(|d| d[o]).sum();
                if total > budget + DELAY_TOL {
                    continue;
                }
                let r = self.rank(0, o, s);
                if best.as_ref().is_none_or(|(_, b)| r.beats(b)) {
                    best = Some((o, r));
                }
            }
            self.evaluated += delays[0].len();
            if let Some((o, _)) = best {
                candidates.push(vec![(o, s); n]);
            }
        } else {
            let mut sel = self.priced(current, 0.0);
            if self.delays.total(&sel) > budget + DELAY_TOL {
                let mut hi = 1.0;
                let mut feasible_hi = None;
                while hi < 1e15 {
                    let trial = self.priced(current, hi);
                    if self.delays.total(&trial) <= budget + DELAY_TOL {
                        feasible_hi = Some(trial);
                        break;
                    }
                    hi *= 4.0;
                }
                sel = match feasible_hi {
                    Some(mut best_sel) => {
                        let mut lo = 0.0;
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            let trial = self.priced(current, mid);
                            if self.delays.total(&trial) <= budget + DELAY_TOL {
                                hi = mid;
                                best_sel = trial;
                            } else {
                                lo = mid;
                            }
                            if hi - lo <= 1e-9 * hi {
                                break;
                            }
                        }
                        best_sel
                    }
                    None => self.min_delay_selection(current),
                };
            }
            if self.delays.total(&sel) <= budget + DELAY_TOL {
                self.polish(&mut sel);
                candidates.push(sel);
            }
        }

        if self.delays.total(current) <= budget + DELAY_TOL {
            let mut from_current = current.to_vec();
            if !symmetric {
                self.polish(&mut from_current);
            }
            candidates.push(from_current);
        }

        let mut best: Option<Vec<(usize, usize)>> = None;
        for c in candidates {
            let better = match &best {
                None => true,
                Some(b) => self.selection_rank(&c).beats(&self.selection_rank(b)),
            };
            if better {
                best = Some(c);
            }
        }
        best.unwrap_or_else(|| self.min_delay_selection(current))
    }

    fn selection_rank(&self, selection: &[(usize, usize)]) -> Rank {
        let mut r = Rank {
            acc: 0.0,
            alpha: 0.0,
            width: 0,
        };
        for (i, &(o, s)) in selection.iter().enumerate() {
            let x = self.rank(i, o, s);
            r.acc += x.acc;
            r.alpha += x.alpha;
            r.width += x.width;
        }
        r
    }

    fn min_delay_selection(&self, current: &[(usize, usize)]) -> Vec<(usize, usize)> {
        current
            .iter()
            .enumerate()
            .map(|(i, &(_, s))| {
                let delays = &self.delays.delays[i];
                let mut best = 0;
                for o in 1..delays.len() {
                    let better = delays[o] < delays[best] - DELAY_TOL
                        || ((delays[o] - delays[best]).abs() <= DELAY_TOL
                            && self.rank(i, o, s).beats(&self.rank(i, best, s)));
                    if better {
                        best = o;
                    }
                }
                (best, s)
            })
            .collect()
    }

    /// Server-threshold step; the server threshold does not affect delay.
    fn server_step(&mut self, selection: &mut [(usize, usize)]) {
        for (i, entry) in selection.iter_mut().enumerate() {
            entry.1 = self.space.tables[i].best_server(entry.0, Some(entry.1));
            self.evaluated += self.space.m();
        }
    }
}

fn shares_equal(tau: &TimeAllocation) -> bool {
    tau.0.iter().all(|&t| t == tau.0[0])
}

/// Greedy grid search over the thresholds of the cooperative scheme with
/// the time shares fixed.
pub fn solve_thresholds(
    scenario: &Scenario,
    tau: &TimeAllocation,
    warm_start: &ThresholdSet,
    config: &OptimizerConfig,
) -> Result<ThresholdSearch, OptimizerError> {
    solve_thresholds_for_strategy(scenario, Strategy::Cooperative, tau, warm_start, config)
}

pub fn solve_thresholds_for_strategy(
    scenario: &Scenario,
    strategy: Strategy,
    tau: &TimeAllocation,
    warm_start: &ThresholdSet,
    config: &OptimizerConfig,
) -> Result<ThresholdSearch, OptimizerError> {
    config.validate()?;
    let space = SearchSpace::new(scenario, strategy, config.grid_points)?;
    search_thresholds(scenario, &space, tau, warm_start, config)
}

fn search_thresholds(
    scenario: &Scenario,
    space: &SearchSpace,
    tau: &TimeAllocation,
    warm_start: &ThresholdSet,
    config: &OptimizerConfig,
) -> Result<ThresholdSearch, OptimizerError> {
    let n = scenario.n_devices();
    check_len(n, tau.len())?;
    check_len(n, warm_start.len())?;
    let delays = DeviceDelays::new(scenario, space, tau);
    let mut searcher = Searcher {
        space,
        delays: &delays,
        homogeneous: scenario.is_homogeneous() && shares_equal(tau),
        evaluated: 0,
    };
    let fixed = scenario.d_req_s() - delays.budget;
    let min_achievable_delay_s = fixed + delays.min_total();

    let mut selection = space.snap(warm_start);
    let mut rounds = 0;
    while rounds < config.max_threshold_rounds {
        rounds += 1;
        let before = selection.clone();
        selection = searcher.pair_step(&selection);
        if delays.total(&selection) > delays.budget + DELAY_TOL {
            break;
        }
        searcher.server_step(&mut selection);
        if selection == before {
            break;
        }
    }
    let feasible = delays.total(&selection) <= delays.budget + DELAY_TOL;
    if !feasible {
        // Report the least-delay point; its server thresholds still maximize accuracy.
        selection = searcher.min_delay_selection(&selection);
        searcher.server_step(&mut selection);
    }
    Ok(ThresholdSearch {
        thresholds: space.thresholds(&selection),
        sum_accuracy: space.sum_accuracy(&selection),
        feasible,
        rounds,
        min_achievable_delay_s,
        evaluated_points: searcher.evaluated,
    })
}

/// Alternating optimization of the cooperative scheme.
pub fn optimize(scenario: &Scenario, config: &OptimizerConfig) -> Result<Solution, OptimizerError> {
    optimize_strategy(scenario, Strategy::Cooperative, config)
}

/// Alternating optimization restricted to one strategy's threshold space.
pub fn optimize_strategy(
    scenario: &Scenario,
    strategy: Strategy,
    config: &OptimizerConfig,
) -> Result<Solution, OptimizerError> {
    config.validate()?;
    let start = Instant::now();
    let n = scenario.n_devices();
    let space = SearchSpace::new(scenario, strategy, config.grid_points)?;

    let mut thresholds = strategy.initial_thresholds(n);
    let mut tau = TimeAllocation::uniform(n);
    let mut trace: Vec<f64> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut evaluated = 0;
    let mut tau_converged = true;
    let mut feasible = true;
    let mut min_delay = f64::NAN;
    let mut outer = 0;

    while outer < config.max_outer_iters {
        outer += 1;
        let current_delay = delay_of(scenario, strategy, &thresholds, &tau)?;
        let tau_sol = solve_tau_for_strategy(scenario, strategy, &thresholds, config)?;
        tau_converged &= tau_sol.converged;
        // Accept new shares unless rounding made them worse for the current point.
        if delay_of(scenario, strategy, &thresholds, &tau_sol.tau)? <= current_delay + DELAY_TOL
            || !current_delay.is_finite()
            || current_delay > scenario.d_req_s()
        {
            tau = tau_sol.tau.clone();
        }

        let search = search_thresholds(scenario, &space, &tau, &thresholds, config)?;
        evaluated += search.evaluated_points;
        min_delay = search.min_achievable_delay_s;
        thresholds = search.thresholds;
        if !search.feasible {
            feasible = false;
            break;
        }
        let eval = evaluate_strategy(scenario, strategy, &thresholds, &tau)?;
        diagnostics.push(IterationRecord {
            iter: outer,
            sum_accuracy: eval.sum_accuracy,
            delay_s: eval.breakdown.total,
            lambda: tau_sol.lambda,
            mu: tau_sol.mu,
            threshold_rounds: search.rounds,
        });
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (eval.sum_accuracy - prev).abs() < config.epsilon);
        trace.push(eval.sum_accuracy);
        if done {
            break;
        }
    }

    if feasible {
        // Final shares for the final thresholds; accuracy is unaffected.
        let tau_sol = solve_tau_for_strategy(scenario, strategy, &thresholds, config)?;
        if delay_of(scenario, strategy, &thresholds, &tau_sol.tau)?
            <= delay_of(scenario, strategy, &thresholds, &tau)? + DELAY_TOL
        {
            tau = tau_sol.tau;
        }
    }
    let eval = evaluate_strategy(scenario, strategy, &thresholds, &tau)?;
    let feasible = feasible && eval.breakdown.total <= scenario.d_req_s() + 1e-9;
    Ok(Solution {
        strategy,
        thresholds,
        tau,
        sum_accuracy: eval.sum_accuracy,
        mean_delay_s: eval.breakdown.total,
        delay_breakdown: eval.breakdown,
        outer_iterations: outer,
        feasible,
        min_achievable_delay_s: min_delay,
        objective_trace: trace,
        diagnostics,
        tau_converged,
        evaluated_points: evaluated,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn delay_of(
    scenario: &Scenario,
    strategy: Strategy,
    thresholds: &ThresholdSet,
    tau: &TimeAllocation,
) -> Result<f64, OptimizerError> {
    let (alpha, beta) = traffic_probabilities(scenario, strategy, thresholds)?;
    Ok(DelayTerms::new(scenario, strategy, &alpha, &beta).delay(&tau.0))
}

/// Increments a mixed-radix counter; returns `false` after the last value.
fn next_index(index: &mut [usize], radix: usize) -> bool {
    for d in index.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

type Incumbent = (Rank, Vec<(usize, usize)>, TimeAllocation);

/// Joint enumeration of every grid combination of `(low, high, server)`
/// over all devices for the cooperative scheme. Each combination is scored
/// with its optimal time shares; the shares depend only on the device pairs
/// and are solved once per pair combination. Exponential in the device
/// count.
pub fn exhaustive_search(
    scenario: &Scenario,
    grid_points: usize,
    config: &OptimizerConfig,
) -> Result<Solution, OptimizerError> {
    let mut config = config.clone();
    config.grid_points = grid_points;
    config.validate()?;
    let start = Instant::now();
    let strategy = Strategy::Cooperative;
    let n = scenario.n_devices();
    let space = SearchSpace::new(scenario, strategy, grid_points)?;
    let pairs = space.tables[0].options.len();
    let count = (pairs as f64 * grid_points as f64).powi(n as i32);
    if count > config.combination_budget {
        return Err(OptimizerError::TooManyCombinations {
            count,
            budget: config.combination_budget,
        });
    }

    let d_req = scenario.d_req_s();
    let mut pair_idx = vec![0usize; n];
    let mut srv_idx = vec![0usize; n];
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut best: Option<Incumbent> = None;
    let mut min_delay = f64::INFINITY;
    let mut evaluated = 0usize;
    loop {
        let mut pair_rank = Rank {
            acc: 0.0,
            alpha: 0.0,
            width: 0,
        };
        for i in 0..n {
            let o = &space.tables[i].options[pair_idx[i]];
            alpha[i] = o.alpha;
            beta[i] = o.beta;
            pair_rank.alpha += o.alpha;
            pair_rank.width += o.high_idx - o.low_idx;
        }
        let terms = DelayTerms::new(scenario, strategy, &alpha, &beta);
        let tau = dual_time_shares(&terms, d_req, &config).tau;
        let d = terms.delay(&tau.0);
        min_delay = min_delay.min(d);
        let feasible = d <= d_req + DELAY_TOL;

        srv_idx.fill(0);
        loop {
            evaluated += 1;
            if feasible {
                let acc: f64 = (0..n)
                    .map(|i| space.tables[i].accuracy(pair_idx[i], srv_idx[i]))
                    .sum();
                let rank = Rank { acc, ..pair_rank };
                if best.as_ref().is_none_or(|(b, _, _)| rank.beats(b)) {
                    let sel = pair_idx
                        .iter()
                        .copied()
                        .zip(srv_idx.iter().copied())
                        .collect();
                    best = Some((rank, sel, tau.clone()));
                }
            }
            if !next_index(&mut srv_idx, grid_points) {
                break;
            }
        }
        if !next_index(&mut pair_idx, pairs) {
            break;
        }
    }

    let (selection, tau, feasible) = match best {
        Some((_, sel, tau)) => (sel, tau, true),
        None => {
            // Nothing fits: report the least-traffic pairs.
            let sel: Vec<(usize, usize)> = space
                .tables
                .iter()
                .map(|t| {
                    let o = (0..t.options.len())
                        .min_by(|&a, &b| t.options[a].load.total_cmp(&t.options[b].load))
                        .unwrap_or(0);
                    (o, t.best_server(o, None))
                })
                .collect();
            (sel, TimeAllocation::uniform(n), false)
        }
    };
    let thresholds = space.thresholds(&selection);
    let eval = evaluate_strategy(scenario, strategy, &thresholds, &tau)?;
    Ok(Solution {
        strategy,
        thresholds,
        tau,
        sum_accuracy: eval.sum_accuracy,
        mean_delay_s: eval.breakdown.total,
        delay_breakdown: eval.breakdown,
        outer_iterations: 0,
        feasible: feasible && eval.breakdown.total <= d_req + 1e-9,
        min_achievable_delay_s: min_delay,
        objective_trace: vec![eval.sum_accuracy],
        diagnostics: Vec::new(),
        tau_converged: true,
        evaluated_points: evaluated,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

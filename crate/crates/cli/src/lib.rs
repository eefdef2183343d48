//! Command-line front end: scenario files in, deterministic CSV out.

pub mod plot;
pub mod scenario_file;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use edgepose_core::confidence::{fit_beta_moments, load_samples};
use edgepose_core::metrics::DeviceThresholds;
use edgepose_core::sim::{self, SweepAxis, SweepOptions};
use edgepose_core::{
    format_float as ff, optimize_strategy, solve_tau, OptimizerError, Solution, Strategy,
    ThresholdSet,
};

use scenario_file::ScenarioFile;

/// Environment variable capping the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "EDGEPOSE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "edgepose",
    version,
    about = "Cooperative multi-device pose inference: optimizer and simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize thresholds and time shares for one strategy.
    Optimize(OptimizeArgs),
    /// Optimize all four strategies and tabulate them.
    Compare(CompareArgs),
    /// Optimize over a range of one scenario parameter.
    Sweep(SweepArgs),
    /// Monte Carlo run of the pipeline at given or optimized thresholds.
    Simulate(SimulateArgs),
    /// Summarize a confidence-score sample file.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Scenario file; defaults apply when omitted.
    pub scenario: Option<PathBuf>,
    /// device, server, cascade or proposed.
    #[arg(long, default_value = "proposed")]
    pub strategy: String,
    /// Write per-iteration diagnostics CSV here.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub scenario: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub scenario: Option<PathBuf>,
    /// d_req (s), n_devices, gain_db, image_bytes or t_inf_device (s).
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values, or `start:stop:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    /// Comma-separated subset of device,server,cascade,proposed.
    #[arg(long, default_value = "device,server,cascade,proposed")]
    pub strategies: String,
    /// Simulate this many frames per point to report MPJPE and drop rate.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write `<axis>.svg` into this directory.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    /// `low,high,server` applied to every device; optimized when omitted.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub frames: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Label echoed in the summary, e.g. dev_pos.
    pub name: String,
    /// One score per line in [0, 1].
    pub samples: PathBuf,
    /// Also print a method-of-moments beta fit.
    #[arg(long)]
    pub beta: bool,
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Infeasible(String),
    Numerical(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e:#}"),
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn optimizer_failure(e: OptimizerError) -> Failure {
    match e {
        OptimizerError::Config(_) | OptimizerError::TooManyCombinations { .. } => input(e),
        other => Failure::Numerical(other.into()),
    }
}

fn sim_failure(e: sim::SimError) -> Failure {
    match e {
        sim::SimError::Optimizer(o) => optimizer_failure(o),
        sim::SimError::Geometry(_) | sim::SimError::Delay(_) => Failure::Numerical(e.into()),
        other => input(other),
    }
}

/// Applies `EDGEPOSE_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        input(anyhow!(
            "{THREADS_ENV} must be a non-negative integer, got `{raw}`"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Numerical(e.into()))?;
    }
    Ok(())
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Optimize(a) => cmd_optimize(&a, stdout),
        Command::Compare(a) => cmd_compare(&a, stdout),
        Command::Sweep(a) => cmd_sweep(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
        Command::Fit(a) => cmd_fit(&a, stdout),
    }
}

fn emit(text: &str, path: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(input),
        None => stdout
            .write_all(text.as_bytes())
            .context("cannot write to stdout")
            .map_err(input),
    }
}

fn load(path: Option<&Path>) -> Result<ScenarioFile, Failure> {
    scenario_file::load(path).map_err(input)
}

fn check_finite(sol: &Solution) -> Result<(), Failure> {
    let finite = sol.sum_accuracy.is_finite()
        && sol.tau.0.iter().all(|t| t.is_finite())
        && (sol.mean_delay_s.is_finite() || !sol.feasible);
    if finite {
        Ok(())
    } else {
        Err(Failure::Numerical(anyhow!("non-finite optimizer result")))
    }
}

fn breakdown_lines(sol: &Solution) -> String {
    let b = &sol.delay_breakdown;
    let names = [
        "t_device_proc_s",
        "t_device_inf_s",
        "t_db_tx_s",
        "t_bs_tx_s",
        "t_server_inf_s",
        "t_server_proc_s",
        "t_sc_tx_s",
    ];
    names
        .iter()
        .zip(b.components())
        .map(|(n, v)| format!("{n} = {}\n", ff(v)))
        .collect()
}

fn device_table(sol: &Solution) -> String {
    let mut out = String::from("device,low,high,server,tau\n");
    for (i, (t, tau)) in sol.thresholds.iter().zip(&sol.tau.0).enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            ff(t.low),
            ff(t.high),
            ff(t.server),
            ff(*tau)
        ));
    }
    out
}

fn infeasible_message(sol: &Solution, d_req: f64) -> String {
    format!(
        "minimal achievable delay {} s exceeds the requirement {} s",
        ff(sol.min_achievable_delay_s),
        ff(d_req)
    )
}

pub fn cmd_optimize(args: &OptimizeArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file = load(args.scenario.as_deref())?;
    let strategy = Strategy::from_name(&args.strategy)
        .ok_or_else(|| input(anyhow!("unknown strategy `{}`", args.strategy)))?;
    let s = &file.scenario;
    let sol = optimize_strategy(s, strategy, &file.config).map_err(optimizer_failure)?;
    check_finite(&sol)?;

    let mut report = file.provenance();
    report.push_str(&format!("strategy = {}\n", strategy.name()));
    report.push_str(&format!("feasible = {}\n", sol.feasible));
    report.push_str(&format!("sum_accuracy = {}\n", ff(sol.sum_accuracy)));
    report.push_str(&format!("mean_delay_s = {}\n", ff(sol.mean_delay_s)));
    report.push_str(&format!("d_req_s = {}\n", ff(s.d_req_s())));
    report.push_str(&format!(
        "min_achievable_delay_s = {}\n",
        ff(sol.min_achievable_delay_s)
    ));
    report.push_str(&format!("outer_iterations = {}\n", sol.outer_iterations));
    report.push_str(&format!("tau_converged = {}\n", sol.tau_converged));
    report.push_str(&breakdown_lines(&sol));
    report.push('\n');
    report.push_str(&device_table(&sol));
    emit(&report, args.output.as_deref(), stdout)?;

    if let Some(path) = &args.diagnostics {
        let mut csv = file.provenance();
        csv.push_str("iter,sum_acc,delay_s,lambda,mu\n");
        for r in &sol.diagnostics {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter,
                ff(r.sum_accuracy),
                ff(r.delay_s),
                ff(r.lambda),
                ff(r.mu)
            ));
        }
        emit(&csv, Some(path), stdout)?;
    }
    if sol.feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible(infeasible_message(&sol, s.d_req_s())))
    }
}

fn thresholds_field(t: &ThresholdSet) -> String {
    t.iter()
        .map(|d| format!("{}/{}/{}", ff(d.low), ff(d.high), ff(d.server)))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file = load(args.scenario.as_deref())?;
    let s = &file.scenario;
    let mut csv = file.provenance();
    csv.push_str(
        "strategy,sum_accuracy,delay_s,feasible,t_device_proc_s,t_device_inf_s,t_db_tx_s,\
         t_bs_tx_s,t_server_inf_s,t_server_proc_s,t_sc_tx_s,thresholds\n",
    );
    for strategy in Strategy::ALL {
        let sol = optimize_strategy(s, strategy, &file.config).map_err(optimizer_failure)?;
        check_finite(&sol)?;
        let parts: Vec<String> = sol
            .delay_breakdown
            .components()
            .iter()
            .map(|&v| ff(v))
            .collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            strategy.name(),
            ff(sol.sum_accuracy),
            ff(sol.mean_delay_s),
            sol.feasible,
            parts.join(","),
            thresholds_field(&sol.thresholds)
        ));
    }
    emit(&csv, args.output.as_deref(), stdout)
}

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` within rounding).
pub fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| anyhow!("bad number `{}`", s.trim()))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 || stop < start {
                anyhow::bail!("range needs start <= stop and a positive step");
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|k| start + k as f64 * step).collect()
        }
        [_] => text
            .split(',')
            .map(num)
            .collect::<anyhow::Result<Vec<_>>>()?,
        _ => anyhow::bail!("expected a comma list or start:stop:step"),
    };
    if values.is_empty() {
        anyhow::bail!("no values given");
    }
    Ok(values)
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file = load(args.scenario.as_deref())?;
    let axis = SweepAxis::from_name(&args.axis).map_err(input)?;
    let values = parse_values(&args.values).map_err(input)?;
    let strategies = args
        .strategies
        .split(',')
        .map(|name| {
            Strategy::from_name(name.trim())
                .ok_or_else(|| input(anyhow!("unknown strategy `{name}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if args.frames == Some(0) {
        return Err(input(anyhow!("--frames must be positive")));
    }
    let options = SweepOptions {
        strategies,
        sim_frames: args.frames,
        config: file.config.clone(),
    };
    let rows = sim::sweep(&file.scenario, axis, &values, &options).map_err(sim_failure)?;
    let mut csv = file.provenance();
    csv.push_str(&format!("# axis = {}\n", axis.name()));
    csv.push_str(&sim::sweep_csv(&rows));
    emit(&csv, args.output.as_deref(), stdout)?;
    if let Some(dir) = &args.plot {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(input)?;
        let svg = plot::sweep_svg(axis.name(), &rows, args.frames.is_some());
        emit(
            &svg,
            Some(&dir.join(format!("{}.svg", axis.name()))),
            stdout,
        )?;
    }
    Ok(())
}

fn parse_thresholds(text: &str, n: usize) -> anyhow::Result<ThresholdSet> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad threshold `{}`", s.trim()))
        })
        .collect::<anyhow::Result<_>>()?;
    let [low, high, server] = v[..] else {
        anyhow::bail!("--thresholds expects low,high,server");
    };
    Ok(ThresholdSet::uniform(
        n,
        DeviceThresholds::new(low, high, server)?,
    ))
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let file = load(args.scenario.as_deref())?;
    let s = &file.scenario;
    if args.frames == 0 {
        return Err(input(anyhow!("--frames must be positive")));
    }
    let (thresholds, tau) = match &args.thresholds {
        Some(text) => {
            let t = parse_thresholds(text, s.n_devices()).map_err(input)?;
            let tau = solve_tau(s, &t, &file.config)
                .map_err(optimizer_failure)?
                .tau;
            (t, tau)
        }
        None => {
            let sol = optimize_strategy(s, Strategy::Cooperative, &file.config)
                .map_err(optimizer_failure)?;
            check_finite(&sol)?;
            (sol.thresholds, sol.tau)
        }
    };
    let r = sim::simulate(s, &thresholds, &tau, args.frames, s.params.seed).map_err(sim_failure)?;

    let mut csv = file.provenance();
    csv.push_str(&format!("# frames = {}\n", r.frames));
    csv.push_str(&format!(
        "# thresholds = {}\n",
        thresholds_field(&thresholds)
    ));
    csv.push_str("quantity,device,empirical,analytic,sigma\n");
    for i in 0..s.n_devices() {
        for (name, emp, ana, sig) in [
            (
                "accuracy",
                r.accuracy[i],
                r.analytic_accuracy[i],
                r.accuracy_sigma[i],
            ),
            ("alpha", r.alpha[i], r.analytic_alpha[i], r.alpha_sigma[i]),
            ("beta", r.beta[i], r.analytic_beta[i], r.beta_sigma[i]),
        ] {
            csv.push_str(&format!("{name},{i},{},{},{}\n", ff(emp), ff(ana), ff(sig)));
        }
    }
    let nan = f64::NAN;
    csv.push_str(&format!(
        "sum_accuracy,all,{},{},{}\n",
        ff(r.accuracy.iter().sum()),
        ff(r.analytic_sum_accuracy),
        ff(r.accuracy_sigma.iter().map(|x| x * x).sum::<f64>().sqrt())
    ));
    csv.push_str(&format!(
        "mpjpe_m,all,{},{},{}\n",
        ff(r.empirical_mpjpe_m.unwrap_or(nan)),
        ff(nan),
        ff(nan)
    ));
    csv.push_str(&format!(
        "delay_s,all,{},{},{}\n",
        ff(r.mean_delay_s),
        ff(r.analytic_delay_s),
        ff(nan)
    ));
    csv.push_str(&format!(
        "drop_rate,all,{},{},{}\n",
        ff(r.drop_rate),
        ff(nan),
        ff(nan)
    ));
    emit(&csv, args.output.as_deref(), stdout)
}

pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let samples = load_samples(&args.samples)
        .with_context(|| format!("cannot load {}", args.samples.display()))
        .map_err(input)?;
    let model = edgepose_core::confidence::fit_empirical(&samples).map_err(input)?;
    let sorted = model.samples().expect("empirical model keeps its samples");
    let n = sorted.len();
    let deciles: Vec<String> = (1..10)
        .map(|k| {
            let idx = ((k * n) as f64 / 10.0).ceil() as usize;
            ff(sorted[idx.clamp(1, n) - 1])
        })
        .collect();
    let mut out = format!("name = {}\n", args.name);
    out.push_str(&format!("n = {n}\n"));
    out.push_str(&format!("min = {}\n", ff(sorted[0])));
    out.push_str(&format!("max = {}\n", ff(sorted[n - 1])));
    out.push_str(&format!("mean = {}\n", ff(model.mean())));
    out.push_str(&format!("deciles = {}\n", deciles.join(",")));
    if args.beta {
        let (a, b) = fit_beta_moments(&samples).map_err(input)?;
        out.push_str(&format!("beta = beta({},{})\n", ff(a), ff(b)));
    }
    emit(&out, None, stdout)
}

//! Flat `key = value` scenario files.
//!
//! Unknown and repeated keys are rejected. Missing keys take the reference
//! defaults. Times are given in milliseconds and converted once here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use edgepose_core::confidence::{fit_empirical, load_samples};
use edgepose_core::{
    format_float, Backhaul, ConfidenceModel, ConfidenceQuad, NoiseModel, OptimizerConfig, Scenario,
    ScenarioParams,
};

/// Recognized keys, in provenance order.
pub const KEYS: &[&str] = &[
    "n_devices",
    "fps",
    "image_bytes",
    "message_bytes",
    "t_inf_device_ms",
    "t_inf_server_ms",
    "t_pr_device_ms",
    "t_pr_server_ms",
    "t_bs_mode",
    "t_bs_tx_ms",
    "backhaul_rate_bps",
    "t_sc_tx_ms",
    "d_req_ms",
    "bandwidth_hz",
    "noise_dbm_hz",
    "tx_power_dbm",
    "gain_mean_db",
    "gain_std_db",
    "gains_db",
    "joints",
    "room_x_m",
    "room_y_m",
    "room_z_m",
    "occlusion_prob",
    "noise_sigma0_px",
    "noise_sigmamin_px",
    "seed",
    "grid_points",
    "kappa1",
    "kappa2",
    "epsilon",
    "dev_pos",
    "dev_neg",
    "srv_pos",
    "srv_neg",
];

/// Backhaul rate used when `t_bs_mode = rate` and no rate is given.
pub const DEFAULT_BACKHAUL_RATE_BPS: f64 = 1e9;

/// A parsed scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub config: OptimizerConfig,
    /// Every key with its resolved value, defaults included.
    pub resolved: Vec<(String, String)>,
}

impl ScenarioFile {
    pub fn defaults() -> Result<Self> {
        parse("", Path::new("."))
    }

    /// `# key = value` lines recording the resolved scenario.
    pub fn provenance(&self) -> String {
        let mut out = format!("# edgepose {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.resolved {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }
}

pub fn load(path: Option<&Path>) -> Result<ScenarioFile> {
    match path {
        None => ScenarioFile::defaults(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read scenario file {}", p.display()))?;
            let base = p
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            parse(&text, &base).with_context(|| format!("in scenario file {}", p.display()))
        }
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    resolved: Vec<(String, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn number(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = match self.raw(key) {
            Some((line, text)) => text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("line {line}: `{key}` expects a number, got `{text}`"))?,
            None => default,
        };
        self.resolved.push((key.to_string(), format_float(v)));
        Ok(v)
    }

    fn integer(&mut self, key: &str, default: u64) -> Result<u64> {
        let v = match self.raw(key) {
            Some((line, text)) => text.parse::<u64>().map_err(|_| {
                anyhow!("line {line}: `{key}` expects a non-negative integer, got `{text}`")
            })?,
            None => default,
        };
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn text(&mut self, key: &str, default: &str) -> (Option<usize>, String) {
        let (line, v) = match self.raw(key) {
            Some((line, text)) => (Some(*line), text.clone()),
            None => (None, default.to_string()),
        };
        self.resolved.push((key.to_string(), v.clone()));
        (line, v)
    }
}

fn split_lines(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            bail!("line {line_no}: unknown key `{key}`");
        }
        if map
            .insert(key.to_string(), (line_no, value.trim().to_string()))
            .is_some()
        {
            bail!("line {line_no}: key `{key}` given twice");
        }
    }
    Ok(map)
}

fn parse_gains(line: usize, text: &str) -> Result<Vec<f64>> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("line {line}: bad entry `{}` in gains_db", s.trim()))
        })
        .collect()
}

/// `beta(a,b)` or `file(path)`; file paths are relative to `base`.
pub fn parse_distribution(text: &str, base: &Path) -> Result<ConfidenceModel> {
    let t = text.trim();
    let args = |prefix: &str| {
        t.strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(')'))
            .map(str::trim)
    };
    if let Some(inner) = args("beta(") {
        let (a, b) = inner
            .split_once(',')
            .ok_or_else(|| anyhow!("`{t}`: beta takes two parameters"))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("`{t}`: bad beta parameter `{}`", s.trim()))
        };
        Ok(ConfidenceModel::beta(parse(a)?, parse(b)?)?)
    } else if let Some(path) = args("file(") {
        let p = base.join(path);
        let samples = load_samples(&p).with_context(|| format!("loading {}", p.display()))?;
        Ok(fit_empirical(&samples)?)
    } else {
        bail!("`{t}`: expected beta(a,b) or file(path)")
    }
}

pub fn parse(text: &str, base: &Path) -> Result<ScenarioFile> {
    let mut e = Entries {
        map: split_lines(text)?,
        resolved: Vec::new(),
    };
    let d = ScenarioParams::default();
    let cfg = OptimizerConfig::default();
    let ms = 1e-3;

    let n_devices = e.integer("n_devices", d.n_devices as u64)? as usize;
    let fps = e.number("fps", d.fps)?;
    let image_bytes = e.integer("image_bytes", d.image_bytes)?;
    let message_bytes = e.integer("message_bytes", d.message_bytes)?;
    let t_inf_device_s = e.number("t_inf_device_ms", d.t_inf_device_s / ms)? * ms;
    let t_inf_server_s = e.number("t_inf_server_ms", d.t_inf_server_s / ms)? * ms;
    let t_pr_device_s = e.number("t_pr_device_ms", d.t_pr_device_s / ms)? * ms;
    let t_pr_server_s = e.number("t_pr_server_ms", d.t_pr_server_s / ms)? * ms;
    let (mode_line, mode) = e.text("t_bs_mode", "fixed");
    let default_fixed = match d.backhaul {
        Backhaul::FixedTime(t) => t,
        Backhaul::RateBps(_) => 0.0,
    };
    let t_bs_s = e.number("t_bs_tx_ms", default_fixed / ms)? * ms;
    let rate = e.number("backhaul_rate_bps", DEFAULT_BACKHAUL_RATE_BPS)?;
    let backhaul = match mode.as_str() {
        "fixed" => Backhaul::FixedTime(t_bs_s),
        "rate" => Backhaul::RateBps(rate),
        other => bail!(
            "line {}: t_bs_mode must be `fixed` or `rate`, got `{other}`",
            mode_line.unwrap_or(0)
        ),
    };
    let t_sc_tx_s = e.number("t_sc_tx_ms", d.t_sc_tx_s / ms)? * ms;
    let d_req_s = e.number("d_req_ms", d.d_req_s / ms)? * ms;
    let bandwidth_hz = e.number("bandwidth_hz", d.bandwidth_hz)?;
    let noise_dbm_hz = e.number("noise_dbm_hz", d.noise_dbm_hz)?;
    let tx_power_dbm = e.number("tx_power_dbm", d.tx_power_dbm)?;
    let gain_mean_db = e.number("gain_mean_db", d.gain_mean_db)?;
    let gain_std_db = e.number("gain_std_db", d.gain_std_db)?;
    let (gains_line, gains_text) = e.text("gains_db", "none");
    let gains_db = match gains_line {
        Some(line) => Some(parse_gains(line, &gains_text)?),
        None => None,
    };
    let joints = e.integer("joints", d.joints as u64)? as usize;
    let room_m = [
        e.number("room_x_m", d.room_m[0])?,
        e.number("room_y_m", d.room_m[1])?,
        e.number("room_z_m", d.room_m[2])?,
    ];
    let occlusion_prob = e.number("occlusion_prob", d.occlusion_prob)?;
    let noise = NoiseModel {
        sigma0_px: e.number("noise_sigma0_px", d.noise.sigma0_px)?,
        sigma_min_px: e.number("noise_sigmamin_px", d.noise.sigma_min_px)?,
    };
    let seed = e.integer("seed", d.seed)?;
    let config = OptimizerConfig {
        grid_points: e.integer("grid_points", cfg.grid_points as u64)? as usize,
        kappa1: e.number("kappa1", cfg.kappa1)?,
        kappa2: e.number("kappa2", cfg.kappa2)?,
        epsilon: e.number("epsilon", cfg.epsilon)?,
        ..cfg
    };
    config.validate()?;

    let defaults = ConfidenceQuad::default();
    let mut dist = |key: &str, default: &ConfidenceModel| -> Result<ConfidenceModel> {
        let (line, text) = e.text(key, &default.to_string());
        match line {
            Some(line) => {
                parse_distribution(&text, base).with_context(|| format!("line {line}: `{key}`"))
            }
            None => Ok(default.clone()),
        }
    };
    let quad = ConfidenceQuad {
        dev_pos: dist("dev_pos", &defaults.dev_pos)?,
        dev_neg: dist("dev_neg", &defaults.dev_neg)?,
        srv_pos: dist("srv_pos", &defaults.srv_pos)?,
        srv_neg: dist("srv_neg", &defaults.srv_neg)?,
    };

    let params = ScenarioParams {
        n_devices,
        fps,
        image_bytes,
        message_bytes,
        t_inf_device_s,
        t_inf_server_s,
        t_pr_device_s,
        t_pr_server_s,
        backhaul,
        t_sc_tx_s,
        d_req_s,
        bandwidth_hz,
        noise_dbm_hz,
        tx_power_dbm,
        gain_mean_db,
        gain_std_db,
        gains_db,
        joints,
        room_m,
        occlusion_prob,
        noise,
        seed,
        quads: vec![Arc::new(quad)],
    };
    let scenario = Scenario::new(params)?;
    debug_assert_eq!(e.resolved.len(), KEYS.len());
    Ok(ScenarioFile {
        scenario,
        config,
        resolved: e.resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let f = ScenarioFile::defaults().unwrap();
        assert_eq!(f.scenario.n_devices(), 4);
        assert_eq!(f.scenario.d_req_s(), 0.5);
        assert_eq!(f.config, OptimizerConfig::default());
        assert_eq!(f.resolved.len(), KEYS.len());
        let prov = f.provenance();
        assert!(prov.contains("# d_req_ms = 500\n"));
        assert!(prov.contains("# seed = 1\n"));
        assert!(prov.contains("# dev_pos = beta(6,2)\n"));
    }

    #[test]
    fn values_and_units() {
        let text =
            "# comment\nn_devices = 3\nd_req_ms = 250 # trailing\ngains_db = [-90, -100, -110]\n\
                    t_bs_mode = rate\nbackhaul_rate_bps = 1e8\nsrv_pos = beta(10, 1)\n";
        let f = parse(text, Path::new(".")).unwrap();
        assert_eq!(f.scenario.n_devices(), 3);
        assert!((f.scenario.d_req_s() - 0.25).abs() < 1e-15);
        assert_eq!(f.scenario.gains_db, vec![-90.0, -100.0, -110.0]);
        assert_eq!(f.scenario.compute.backhaul, Backhaul::RateBps(1e8));
        assert_eq!(f.scenario.quad(0).srv_pos.beta_params(), Some((10.0, 1.0)));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("n_device = 4\n", Path::new(".")).unwrap_err();
        assert!(format!("{err:#}").contains("unknown key `n_device`"));
    }

    #[test]
    fn malformed_inputs() {
        for text in [
            "fps 2\n",
            "fps = two\n",
            "fps = 2\nfps = 3\n",
            "t_bs_mode = wire\n",
            "dev_pos = gamma(1,2)\n",
            "n_devices = 1\n",
            "grid_points = 1\n",
            "gains_db = -90, x\n",
        ] {
            assert!(parse(text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn file_distribution_is_relative_to_scenario() {
        let dir = std::env::temp_dir().join(format!("edgepose-sf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("scores.txt"), "0.9\n0.8\n0.95\n").unwrap();
        let f = parse("dev_pos = file(scores.txt)\n", &dir).unwrap();
        assert_eq!(f.scenario.quad(0).dev_pos.samples().unwrap().len(), 3);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

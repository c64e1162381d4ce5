//! Flat `key = value` run configuration. Values are resolved in order:
//! built-in defaults, then the config file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::Serialize;

use sarvb::dlreg::{Concentration, DLPrior};
use sarvb::metrics::SsimParams;
use sarvb::montecarlo::MonteCarloOptions;
use sarvb::simulator::{default_theta_specs, SimulationConfig};
use sarvb::twostage::PipelineOptions;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub q: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub noise_sd: f64,
    /// Dirichlet concentration; `None` means `1/M` per equation.
    pub a: Option<f64>,
    pub nu: f64,
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub workers: usize,
    pub standardize: bool,
    pub intercept: bool,
    pub seed: u64,
    pub replications: usize,
    pub ssim_window: usize,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// SSIM dynamic range; `None` uses the value range of the compared pair.
    pub ssim_range: Option<f64>,
    /// One-based regressor scored by `mc-replicate`.
    pub effects_regressor: usize,
    /// One-based regressors written by `effects`; empty means all.
    pub regressors: Vec<usize>,
    pub output_dir: PathBuf,
    pub panel: Option<PathBuf>,
    pub w: Option<PathBuf>,
    pub theta: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        let prior = DLPrior::default();
        let pipeline = PipelineOptions::default();
        let ssim = SsimParams::default();
        Self {
            n: sim.n,
            t: sim.t,
            k: sim.k,
            q: sim.q,
            rho_min: sim.rho_low,
            rho_max: sim.rho_high,
            noise_sd: sim.noise_sd,
            a: None,
            nu: prior.nu,
            s: prior.s,
            tol: pipeline.tol,
            max_iter: pipeline.max_iter,
            workers: pipeline.n_workers,
            standardize: pipeline.standardize,
            intercept: pipeline.intercept,
            seed: sim.seed,
            replications: sim.n_replications,
            ssim_window: ssim.window,
            ssim_k1: ssim.k1,
            ssim_k2: ssim.k2,
            ssim_range: ssim.dynamic_range,
            effects_regressor: 1,
            regressors: Vec::new(),
            output_dir: PathBuf::from("sarvb-out"),
            panel: None,
            w: None,
            theta: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::validation(format!("invalid value {value:?} for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::validation(format!("invalid value {value:?} for `{key}`, expected true or false"))),
    }
}

fn parse_path(key: &str, value: &str) -> CliResult<PathBuf> {
    if value.is_empty() {
        return Err(CliError::validation(format!("`{key}` needs a nonempty path")));
    }
    Ok(PathBuf::from(value))
}

fn parse_optional_f64(key: &str, value: &str, auto: &[&str]) -> CliResult<Option<f64>> {
    if auto.iter().any(|a| value.eq_ignore_ascii_case(a)) {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Sets one key. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "n" => self.n = parse(k, value)?,
            "t" => self.t = parse(k, value)?,
            "k" => self.k = parse(k, value)?,
            "q" => self.q = parse(k, value)?,
            "rho_min" => self.rho_min = parse(k, value)?,
            "rho_max" => self.rho_max = parse(k, value)?,
            "noise_sd" => self.noise_sd = parse(k, value)?,
            "a" => self.a = parse_optional_f64(k, value, &["1/M", "auto"])?,
            "nu" => self.nu = parse(k, value)?,
            "s" => self.s = parse(k, value)?,
            "tol" => self.tol = parse(k, value)?,
            "max_iter" => self.max_iter = parse(k, value)?,
            "workers" => self.workers = parse(k, value)?,
            "standardize" => self.standardize = parse_bool(k, value)?,
            "intercept" => self.intercept = parse_bool(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "replications" => self.replications = parse(k, value)?,
            "ssim_window" => self.ssim_window = parse(k, value)?,
            "ssim_k1" => self.ssim_k1 = parse(k, value)?,
            "ssim_k2" => self.ssim_k2 = parse(k, value)?,
            "ssim_range" => self.ssim_range = parse_optional_f64(k, value, &["auto"])?,
            "effects_regressor" => self.effects_regressor = parse(k, value)?,
            "regressors" => {
                self.regressors = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| parse(k, v))
                    .collect::<CliResult<_>>()?
            }
            "output_dir" => self.output_dir = parse_path(k, value)?,
            "panel" => self.panel = Some(parse_path(k, value)?),
            "w" => self.w = Some(parse_path(k, value)?),
            "theta" => self.theta = Some(parse_path(k, value)?),
            _ => return Err(CliError::validation(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("{source}:{}: expected key = value", i + 1)))?;
            self.set(key, value).map_err(|e| CliError::validation(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn prior(&self) -> DLPrior {
        DLPrior { a: self.a.map_or(Concentration::InverseDimension, Concentration::Fixed), nu: self.nu, s: self.s }
    }

    pub fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            n_workers: self.workers,
            intercept: self.intercept,
            standardize: self.standardize,
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            n: self.n,
            t: self.t,
            k: self.k,
            q: self.q,
            rho_low: self.rho_min,
            rho_high: self.rho_max,
            theta_specs: default_theta_specs(self.k),
            noise_sd: self.noise_sd,
            seed: self.seed,
            n_replications: self.replications,
        }
    }

    pub fn ssim(&self) -> SsimParams {
        SsimParams { window: self.ssim_window, k1: self.ssim_k1, k2: self.ssim_k2, dynamic_range: self.ssim_range }
    }

    pub fn monte_carlo(&self) -> CliResult<MonteCarloOptions> {
        if self.effects_regressor == 0 || self.effects_regressor > self.k {
            return Err(CliError::validation(format!(
                "effects_regressor must be between 1 and k = {}, got {}",
                self.k, self.effects_regressor
            )));
        }
        Ok(MonteCarloOptions { pipeline: self.pipeline(), ssim: self.ssim(), effects_regressor: self.effects_regressor - 1 })
    }

    /// Checks the options every command uses.
    pub fn validate(&self) -> CliResult<()> {
        self.prior().validate()?;
        self.pipeline().validate()?;
        let ssim_ok = self.ssim_window >= 1
            && self.ssim_k1 > 0.0
            && self.ssim_k2 > 0.0
            && self.ssim_range.is_none_or(|l| l > 0.0 && l.is_finite());
        if !ssim_ok {
            return Err(CliError::validation("SSIM needs a positive window, positive constants and a positive range"));
        }
        Ok(())
    }

    pub fn validate_simulation(&self) -> CliResult<()> {
        self.validate()?;
        self.simulation().validate()?;
        Ok(())
    }
}

//! Command-line workflows around the `sarvb` library: simulate panels,
//! estimate weights matrices, compute effects and run Monte Carlo studies.

pub mod commands;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "sarvb", version, about = "Estimate spatial weights matrices from panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel with a known weights matrix.
    Simulate(CommonArgs),
    /// Estimate the weights matrix and coefficients of a panel.
    Estimate(EstimateArgs),
    /// Compute effects matrices from a weights matrix and coefficients.
    Effects(EffectsArgs),
    /// Simulate, estimate and score repeatedly.
    McReplicate(CommonArgs),
}

/// Options shared by every command. Flags override the config file.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    /// Dirichlet concentration, or `1/M`.
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub intercept: Option<bool>,
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Panel CSV (`unit_id,time,y,x1,...`).
    #[arg(long)]
    pub panel: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Weights matrix CSV.
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// Coefficient table CSV (`unit_id,x1,...`).
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// One-based regressor; repeat for several. Defaults to all.
    #[arg(long = "regressor")]
    pub regressors: Vec<usize>,
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "n", &self.n);
        push(&mut out, "t", &self.t);
        push(&mut out, "k", &self.k);
        push(&mut out, "q", &self.q);
        push(&mut out, "rho_min", &self.rho_min);
        push(&mut out, "rho_max", &self.rho_max);
        push(&mut out, "a", &self.a);
        push(&mut out, "nu", &self.nu);
        push(&mut out, "s", &self.s);
        push(&mut out, "tol", &self.tol);
        push(&mut out, "max_iter", &self.max_iter);
        push(&mut out, "seed", &self.seed);
        push(&mut out, "workers", &self.workers);
        push(&mut out, "output_dir", &self.output_dir.as_ref().map(|p| p.display().to_string()));
        push(&mut out, "standardize", &self.standardize);
        push(&mut out, "intercept", &self.intercept);
        push(&mut out, "replications", &self.replications);
        out
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self, extra: &[(&'static str, String)]) -> CliResult<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for (key, value) in self.overrides().iter().chain(extra) {
            config.set(key, value)?;
        }
        Ok(config)
    }
}

fn path_flag(key: &'static str, p: &Option<PathBuf>) -> Option<(&'static str, String)> {
    p.as_ref().map(|p| (key, p.display().to_string()))
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(args) => commands::simulate(&args.resolve(&[])?),
        Command::McReplicate(args) => commands::mc_replicate(&args.resolve(&[])?),
        Command::Estimate(args) => {
            let extra: Vec<_> = path_flag("panel", &args.panel).into_iter().collect();
            commands::estimate_panel(&args.common.resolve(&extra)?)
        }
        Command::Effects(args) => {
            let mut extra: Vec<_> = [path_flag("w", &args.w), path_flag("theta", &args.theta)].into_iter().flatten().collect();
            if !args.regressors.is_empty() {
                let list: Vec<String> = args.regressors.iter().map(usize::to_string).collect();
                extra.push(("regressors", list.join(",")));
            }
            commands::effects(&args.common.resolve(&extra)?)
        }
    }
}

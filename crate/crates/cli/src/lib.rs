//! Experiment runner for `styledyn`: step sweeps, kernel-width sweeps,
//! gradient checks, long-form trajectories and denoiser fits, written as
//! CSV / JSON / SVG files that embed the config that produced them.

pub mod commands;
pub mod config;
pub mod error;
pub mod sweep;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "styledyn", version, about = "Style diffusion and duration upsampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: SubCommand,
}

#[derive(Debug, Subcommand)]
pub enum SubCommand {
    /// Write the noise schedule as CSV.
    Schedule(Overrides),
    /// Sample the target; write samples CSV and a moment / energy-distance JSON.
    Sample(Overrides),
    /// Energy distance and per-mode spread across step counts.
    SweepSteps(Overrides),
    /// Alignment distortion and gradient norm across kernel widths.
    SweepSigma(Overrides),
    /// Analytic vs finite-difference upsampler gradients.
    Gradcheck(Overrides),
    /// Sentence-by-sentence style interpolation.
    Longform(Overrides),
    /// Fit a bucketed linear denoiser on target draws.
    FitDenoiser(Overrides),
}

impl SubCommand {
    pub fn split(&self) -> (Command, &Overrides) {
        match self {
            SubCommand::Schedule(o) => (Command::Schedule, o),
            SubCommand::Sample(o) => (Command::Sample, o),
            SubCommand::SweepSteps(o) => (Command::SweepSteps, o),
            SubCommand::SweepSigma(o) => (Command::SweepSigma, o),
            SubCommand::Gradcheck(o) => (Command::GradCheck, o),
            SubCommand::Longform(o) => (Command::Longform, o),
            SubCommand::FitDenoiser(o) => (Command::FitDenoiser, o),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file (`key = value` lines), or a CSV / JSON output to re-run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// gaussian | mixture
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    /// euler | heun | dpm2_ancestral
    #[arg(long)]
    pub method: Option<String>,
    /// A step count or a comma list.
    #[arg(long)]
    pub steps: Option<String>,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// A width or a grid `log:lo:hi:n`.
    #[arg(long = "sigma-u")]
    pub sigma_u: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Overrides {
    /// Defaults, then the config file, then `--set`, then the named flags.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            None => ExperimentConfig::default(),
            Some(path) => {
                let text = read(path)?;
                let embedded = matches!(
                    path.extension().and_then(|e| e.to_str()),
                    Some("csv") | Some("json")
                );
                if embedded {
                    ExperimentConfig::from_output(&text)?
                } else {
                    ExperimentConfig::parse(&text)?
                }
            }
        };
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::config("--set", format!("expected key=value, got {pair:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let flags = [
            ("output_dir", &self.out),
            ("target", &self.target),
            ("dim", &self.dim),
            ("method", &self.method),
            ("steps", &self.steps),
            ("n_samples", &self.n),
            ("seed", &self.seed),
            ("sigma_u", &self.sigma_u),
            ("alpha", &self.alpha),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Applies `STYLEDYN_THREADS` to the global rayon pool.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("STYLEDYN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config("STYLEDYN_THREADS", format!("expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config("STYLEDYN_THREADS", e.to_string()))
}

/// Parses arguments, runs the subcommand, returns the written files.
pub fn main_with<I, T>(args: I) -> Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config("arguments", e.to_string()))?;
    let (cmd, overrides) = cli.command.split();
    let cfg = overrides.resolve()?;
    run(cmd, &cfg)
}

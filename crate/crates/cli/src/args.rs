use std::path::PathBuf;

use cbo_core::montecarlo::initial_ensemble;
use cbo_core::{ClipPolicy, Ensemble, McConfig, Mode, Params, SweepParam};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "cbo-lab",
    version,
    about = "Finite-N consensus-based optimization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate one trajectory; writes trajectory.csv (and snapshots.csv).
    Simulate(SimulateArgs),
    /// Monte-Carlo mean of V over independent runs; writes mc_mean.csv.
    Mc(McArgs),
    /// Monte-Carlo mean of V over a parameter grid; writes sweep.csv.
    Sweep(SweepArgs),
    /// Print theoretical decay rates and regime flags as JSON.
    Rates(RatesArgs),
    /// Check the spectrum of L̂ and P·L̂ = P for random weights.
    VerifySpectral(VerifyArgs),
    /// Re-run the command echoed in a manifest.json.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Mc(_) => "mc",
            Command::Sweep(_) => "sweep",
            Command::Rates(_) => "rates",
            Command::VerifySpectral(_) => "verify-spectral",
            Command::Replay(_) => "replay",
        }
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Dynamics and initialization flags shared by the experiment commands.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Objective name (rastrigin, rosenbrock, discontinuous, constant).
    #[arg(long, default_value = "rastrigin")]
    pub objective: String,
    /// Number of particles N.
    #[arg(long = "n", default_value_t = 100, value_parser = positive)]
    pub n: usize,
    /// Dimension D.
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Diffusion strength σ (default 1).
    #[arg(long, conflicts_with = "sigma_sq")]
    pub sigma: Option<f64>,
    /// Alternative to --sigma: σ².
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long, default_value_t = 1000.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    /// Number of updates; states 0..=steps are recorded.
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub steps: usize,
    /// deterministic, anisotropic or isotropic.
    #[arg(long, default_value = "anisotropic")]
    pub mode: Mode,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Initial box: positions drawn from U([LOW, HIGH]^D).
    #[arg(
        long,
        num_args = 2,
        value_names = ["LOW", "HIGH"],
        default_values_t = [-5.0, 5.0],
        allow_negative_numbers = true
    )]
    pub init: Vec<f64>,
}

impl ModelArgs {
    /// Folds `--sigma-sq` into `--sigma` so the echoed config is canonical.
    pub fn normalize(&mut self) -> Result<(), CliError> {
        if let Some(s2) = self.sigma_sq.take() {
            if !(s2 >= 0.0) || !s2.is_finite() {
                return Err(CliError::Usage(format!(
                    "--sigma-sq must be >= 0, got {s2}"
                )));
            }
            self.sigma = Some(s2.sqrt());
        }
        if self.sigma.is_none() {
            self.sigma = Some(1.0);
        }
        if self.init.len() != 2 {
            return Err(CliError::Usage("--init takes LOW HIGH".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        match (self.sigma, self.sigma_sq) {
            (Some(s), _) => s,
            (None, Some(s2)) => s2.sqrt(),
            (None, None) => 1.0,
        }
    }

    pub fn params(&self) -> Result<Params, CliError> {
        Ok(Params::new(
            self.lambda,
            self.sigma(),
            self.alpha,
            self.dt,
            self.mode,
        )?)
    }

    pub fn mc_config(&self, runs: usize, clip: ClipPolicy<f64>) -> Result<McConfig<f64>, CliError> {
        let cfg = McConfig {
            base: self.params()?,
            objective: self.objective.clone(),
            n_particles: self.n,
            dim: self.dim,
            steps: self.steps,
            runs,
            seed: self.seed,
            init_low: self.init[0],
            init_high: self.init[1],
            clip,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initial ensemble shared with replicate 0 of `mc`.
    pub fn initial(&self) -> Result<Ensemble, CliError> {
        let cfg = self.mc_config(1, ClipPolicy::Off)?;
        Ok(initial_ensemble(&cfg, 0)?)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write snapshots.csv with every K-th state (0 = none).
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct McArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    pub runs: usize,
    /// Per-run pointwise cap on V: `off`, `abs:<c>`, `mult:<k>` (k × the
    /// run's initial V) or a bare number (absolute).
    #[arg(long, default_value = "mult:10")]
    pub clip: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// alpha, n or dim.
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, allow_negative_numbers = true)]
    pub from: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub to: f64,
    #[arg(long)]
    pub step: f64,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    pub runs: usize,
    #[arg(long, default_value = "mult:10")]
    pub clip: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RatesArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, conflicts_with = "sigma_sq")]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub dt: f64,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub dim: usize,
    #[arg(long, default_value = "anisotropic")]
    pub mode: Mode,
    /// Also estimate the discrete almost-sure rate with this many samples.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long = "n", value_parser = positive)]
    pub n: usize,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub trials: usize,
    /// Tolerance on eigenvalues.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Tolerance on ‖P·L̂ − P‖_max and on the row sums of L̂.
    #[arg(long, default_value_t = 1e-12)]
    pub proj_tol: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Negative control: push the weights off the simplex by 1e-3.
    #[arg(long)]
    pub self_test_broken: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Override the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_clip(s: &str) -> Result<ClipPolicy<f64>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "invalid --clip `{s}` (off, abs:<c>, mult:<k>, <c>)"
        ))
    };
    let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
    let policy = match s.split_once(':') {
        None if s == "off" => ClipPolicy::Off,
        None => ClipPolicy::Absolute(num(s)?),
        Some(("abs", v)) => ClipPolicy::Absolute(num(v)?),
        Some(("mult", v)) => ClipPolicy::InitialMultiple(num(v)?),
        Some(_) => return Err(bad()),
    };
    match policy {
        ClipPolicy::Absolute(c) | ClipPolicy::InitialMultiple(c) if !(c > 0.0 && c.is_finite()) => {
            Err(bad())
        }
        p => Ok(p),
    }
}

use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mlmc",
    version,
    about = "Unbiased MLMC evidence estimation, diagnostics, and training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Estimate,
    VarianceProfile,
    GradCheck,
    Moments,
    Train,
    GenData,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Estimate => "estimate",
            CommandName::VarianceProfile => "variance-profile",
            CommandName::GradCheck => "grad-check",
            CommandName::Moments => "moments",
            CommandName::Train => "train",
            CommandName::GenData => "gen-data",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One batch of the unbiased log-evidence estimator.
    Estimate(CommonArgs),
    /// Per-level variance of the level differences and fitted decay rates.
    VarianceProfile {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Finite-difference and replication checks of every gradient.
    GradCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        check: GradCheckArgs,
    },
    /// Importance-ratio moment diagnostic at one data point.
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        moments: MomentArgs,
    },
    /// Joint evidence (theta) / ELBO (phi) ascent.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write a synthetic dataset and its JSON header.
    GenData(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub model: ModelName,
    /// Dimension of the Gaussian model.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Dataset file; synthesized from --theta when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Size of the synthesized dataset.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Generative parameters, comma-separated.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub theta: Option<RealList>,
    /// Importance-distribution parameters, comma-separated.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub phi: Option<RealList>,
    #[arg(long, default_value_t = 8)]
    pub n0: usize,
    /// Batch size M (default 16; 256 for train).
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub level_cap: u32,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    pub level_ratio_log2: f64,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Re-run from a manifest; only --out and --workers are taken from the command line.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// Inclusive level range `a..b`.
    #[arg(long, default_value = "1..7", value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    /// Use the non-antithetic difference `P_l - P_a`.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    /// Replications of each batch estimator.
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    /// Random points for the finite-difference checks.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MomentArgs {
    #[arg(long, default_value_t = 4.5)]
    pub s: f64,
    #[arg(long, default_value_t = 3.0)]
    pub t: f64,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    /// Index of the data point to test.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_theta: f64,
    #[arg(long, default_value_t = 2e-4)]
    pub lr_phi: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 8)]
    pub eval_reps: usize,
    /// Initial theta (default: zeros).
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub init_theta: Option<RealList>,
    /// Initial phi (default: zeros).
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub init_phi: Option<RealList>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<RealList, String> {
    s.split(',')
        .map(|tok| tok.trim().parse::<f64>().map_err(|e| format!("`{tok}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(RealList)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRange {
    pub first: u32,
    pub last: u32,
}

impl LevelRange {
    pub fn range(&self) -> RangeInclusive<u32> {
        self.first..=self.last
    }
}

pub fn parse_levels(s: &str) -> Result<LevelRange, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("`{s}`: expected a..b"))?;
    let first: u32 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let last: u32 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    if first > last {
        return Err(format!("`{s}`: empty range"));
    }
    Ok(LevelRange { first, last })
}

/// Everything that determines a run's outputs. Serialized as the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandName,
    pub model: ModelName,
    pub dim: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub n: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub n0: usize,
    pub batch: usize,
    pub level_cap: u32,
    pub level_ratio_log2: f64,
    pub levels: Option<LevelRange>,
    pub reps: Option<usize>,
    pub naive: Option<bool>,
    pub points: Option<usize>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub draws: Option<usize>,
    pub index: Option<usize>,
    pub steps: Option<usize>,
    pub lr_theta: Option<f64>,
    pub lr_phi: Option<f64>,
    pub momentum: Option<f64>,
    pub eval_every: Option<usize>,
    pub eval_reps: Option<usize>,
    pub init_theta: Option<Vec<f64>>,
    pub init_phi: Option<Vec<f64>>,
}

/// Execution details that never affect outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Runtime {
    pub out: PathBuf,
    pub workers: usize,
}

impl ModelName {
    pub fn default_theta(self, dim: usize) -> Vec<f64> {
        match self {
            ModelName::Gaussian => vec![0.0; 3 * dim],
            ModelName::Bernoulli => vec![1.5, -0.5],
        }
    }

    pub fn default_phi(self, dim: usize) -> Vec<f64> {
        match self {
            // q = N(0, 2) for every x
            ModelName::Gaussian => {
                let mut phi = vec![0.0; 3 * dim];
                phi[2 * dim..].fill(0.5 * 2f64.ln());
                phi
            }
            ModelName::Bernoulli => vec![0.0; 4],
        }
    }
}

fn base_config(command: CommandName, c: &CommonArgs) -> RunConfig {
    RunConfig {
        command,
        model: c.model,
        dim: c.dim,
        seed: c.seed,
        data: c.data.clone(),
        n: c.n,
        theta: c.theta.clone().map_or_else(|| c.model.default_theta(c.dim), |l| l.0),
        phi: c.phi.clone().map_or_else(|| c.model.default_phi(c.dim), |l| l.0),
        n0: c.n0,
        batch: c.batch.unwrap_or(if command == CommandName::Train { 256 } else { 16 }),
        level_cap: c.level_cap,
        level_ratio_log2: c.level_ratio_log2,
        levels: None,
        reps: None,
        naive: None,
        points: None,
        s: None,
        t: None,
        draws: None,
        index: None,
        steps: None,
        lr_theta: None,
        lr_phi: None,
        momentum: None,
        eval_every: None,
        eval_reps: None,
        init_theta: None,
        init_phi: None,
    }
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Estimate(c) | Command::GenData(c) => c,
            Command::VarianceProfile { common, .. }
            | Command::GradCheck { common, .. }
            | Command::Moments { common, .. }
            | Command::Train { common, .. } => common,
        }
    }

    fn name(&self) -> CommandName {
        match self {
            Command::Estimate(_) => CommandName::Estimate,
            Command::VarianceProfile { .. } => CommandName::VarianceProfile,
            Command::GradCheck { .. } => CommandName::GradCheck,
            Command::Moments { .. } => CommandName::Moments,
            Command::Train { .. } => CommandName::Train,
            Command::GenData(_) => CommandName::GenData,
        }
    }

    /// Resolves flags (or a manifest) into the full run configuration.
    pub fn resolve(&self) -> Result<(RunConfig, Runtime), CliError> {
        let common = self.common();
        let runtime = Runtime {
            out: common.out.clone(),
            workers: common.workers,
        };
        if let Some(path) = &common.manifest {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", path.display())))?;
            if cfg.command != self.name() {
                return Err(CliError::Usage(format!(
                    "manifest is for `{}`, not `{}`",
                    cfg.command.as_str(),
                    self.name().as_str()
                )));
            }
            return Ok((cfg, runtime));
        }
        let mut cfg = base_config(self.name(), common);
        match self {
            Command::Estimate(_) | Command::GenData(_) => {}
            Command::VarianceProfile { profile, .. } => {
                cfg.levels = Some(profile.levels);
                cfg.reps = Some(profile.reps);
                cfg.naive = Some(profile.naive);
            }
            Command::GradCheck { check, .. } => {
                cfg.reps = Some(check.reps);
                cfg.points = Some(check.points);
            }
            Command::Moments { moments, .. } => {
                cfg.s = Some(moments.s);
                cfg.t = Some(moments.t);
                cfg.draws = Some(moments.draws);
                cfg.index = Some(moments.index);
            }
            Command::Train { train, .. } => {
                cfg.steps = Some(train.steps);
                cfg.lr_theta = Some(train.lr_theta);
                cfg.lr_phi = Some(train.lr_phi);
                cfg.momentum = Some(train.momentum);
                cfg.eval_every = Some(train.eval_every);
                cfg.eval_reps = Some(train.eval_reps);
                cfg.init_theta = train.init_theta.clone().map(|l| l.0);
                cfg.init_phi = train.init_phi.clone().map(|l| l.0);
            }
        }
        Ok((cfg, runtime))
    }
}

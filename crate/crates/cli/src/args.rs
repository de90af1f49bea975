//! Command arguments. The recordable ones serialize into the run manifest;
//! the output directory and worker count are left out because they never
//! change what a command writes.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use gridscout_core::environment::EpisodeConfig;
use gridscout_core::evaluation::AgentKind;
use gridscout_core::floorplan::GeneratorConfig;
use gridscout_core::planner::{CandidateRule, FrontierConfig, ReplanPolicy};
use gridscout_core::predictor::{PredictorKind, ThresholdConfig};
use gridscout_core::server::DEFAULT_PORT;

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Map ids are `PREFIX_0001`, `PREFIX_0002`, ...
    #[arg(long, default_value = "map")]
    pub prefix: String,
    #[arg(long, default_value_t = 62)]
    pub interior_width: usize,
    #[arg(long, default_value_t = 60)]
    pub interior_height: usize,
    #[arg(long, default_value_t = 8)]
    pub min_room_side: usize,
    #[arg(long, default_value_t = 27)]
    pub max_room_side: usize,
    #[arg(long, default_value_t = 2)]
    pub min_door_width: usize,
    #[arg(long, default_value_t = 3)]
    pub max_door_width: usize,
    #[arg(long, default_value_t = 0.073)]
    pub target_wall_fraction: f64,
    #[arg(long, default_value_t = 0.004)]
    pub wall_fraction_tolerance: f64,
    /// Accept any partition regardless of its wall fraction.
    #[arg(long)]
    pub any_wall_fraction: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; 0 uses every processor.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub jobs: usize,
}

impl GenArgs {
    /// Generator settings for map `seed`.
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            interior_width: self.interior_width,
            interior_height: self.interior_height,
            min_room_side: self.min_room_side,
            max_room_side: self.max_room_side,
            door_width_range: (self.min_door_width, self.max_door_width),
            target_wall_fraction: self.target_wall_fraction,
            wall_fraction_tolerance: self.wall_fraction_tolerance,
            check_wall_fraction: !self.any_wall_fraction,
            seed,
            ..GeneratorConfig::default()
        }
    }
}

/// Episode settings shared by the running commands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EpisodeArgs {
    #[arg(long, visible_alias = "target", default_value_t = 0.98)]
    pub coverage_target: f64,
    #[arg(long, default_value_t = 400)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Confidence for accepting predicted free cells.
    #[arg(long, default_value_t = 0.93)]
    pub delta_free: f64,
    /// Confidence for accepting predicted obstacles.
    #[arg(long, default_value_t = 0.95)]
    pub delta_obstacle: f64,
}

impl EpisodeArgs {
    pub fn config(&self, predictor: PredictorKind) -> anyhow::Result<EpisodeConfig> {
        let cfg = EpisodeConfig {
            coverage_target: self.coverage_target,
            max_steps: self.max_steps,
            predictor,
            thresholds: ThresholdConfig::new(self.delta_free, self.delta_obstacle)?,
            seed: self.seed,
            ..EpisodeConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateArg {
    Nearest,
    BestScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplanArg {
    EveryStep,
    OnInvalidation,
}

/// Frontier planner settings; ignored by the random agent. The defaults are
/// the tuned planner, not the library defaults.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PlannerArgs {
    /// Weight of path cost against utility.
    #[arg(long, default_value_t = 10.0)]
    pub distance_weight: f64,
    /// Which member of a frontier cluster is scored.
    #[arg(long, value_enum, default_value_t = CandidateArg::BestScore)]
    pub candidate: CandidateArg,
    #[arg(long, value_enum, default_value_t = ReplanArg::EveryStep)]
    pub replan: ReplanArg,
}

impl PlannerArgs {
    /// Resolves a planner id (`frontier`, `frontier-nearest`, `random`).
    pub fn agent(&self, planner: &str) -> anyhow::Result<AgentKind> {
        let kind: AgentKind = planner.parse()?;
        Ok(match kind {
            AgentKind::Frontier { config } => {
                let config = FrontierConfig {
                    distance_weight: self.distance_weight,
                    candidate: match self.candidate {
                        CandidateArg::Nearest => CandidateRule::Nearest,
                        CandidateArg::BestScore => CandidateRule::BestScore,
                    },
                    replan_policy: match self.replan {
                        ReplanArg::EveryStep => ReplanPolicy::EveryStep,
                        ReplanArg::OnInvalidation => ReplanPolicy::OnInvalidation,
                    },
                    ..config
                };
                config.validate()?;
                AgentKind::Frontier { config }
            }
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExploreArgs {
    /// ASCII map file.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, default_value = "frontier")]
    pub planner: String,
    #[arg(long, default_value = "none")]
    pub predictor: PredictorKind,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub frontier: PlannerArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// One evaluated configuration, written `PLANNER+PREDICTOR`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RunConfig {
    pub planner: String,
    pub predictor: PredictorKind,
}

impl RunConfig {
    pub fn label(&self) -> String {
        format!("{}+{}", self.planner, self.predictor)
    }

    /// Filesystem-safe form of the label.
    pub fn slug(&self) -> String {
        self.label()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }
}

impl std::str::FromStr for RunConfig {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let Some((planner, predictor)) = s.split_once('+') else {
            bail!("configuration {s:?} is not of the form PLANNER+PREDICTOR");
        };
        planner.parse::<AgentKind>()?;
        Ok(RunConfig {
            planner: planner.to_string(),
            predictor: predictor.parse().with_context(|| format!("configuration {s:?}"))?,
        })
    }
}

impl TryFrom<String> for RunConfig {
    type Error = anyhow::Error;

    fn try_from(s: String) -> anyhow::Result<Self> {
        s.parse()
    }
}

impl From<RunConfig> for String {
    fn from(c: RunConfig) -> String {
        c.label()
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Dataset directory holding a manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated `PLANNER+PREDICTOR` list; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "frontier+none,frontier+oracle")]
    pub configs: Vec<RunConfig>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub frontier: PlannerArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; 0 uses every processor.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "heuristic")]
    pub predictor: PredictorKind,
    #[arg(long, default_value = "frontier")]
    pub planner: String,
    /// Comma-separated free-cell confidence levels.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9,0.93,0.99,1")]
    pub delta_free_grid: Vec<f64>,
    /// Comma-separated obstacle confidence levels.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9,0.95,0.99,1")]
    pub delta_obstacle_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, visible_alias = "target", default_value_t = 0.98)]
    pub coverage_target: f64,
    #[arg(long, default_value_t = 400)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub frontier: PlannerArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    /// Serve a single session on stdin/stdout instead of TCP.
    #[arg(long)]
    pub stdio: bool,
    /// Default predictor for sessions that do not name one.
    #[arg(long, default_value = "none")]
    pub predictor: PredictorKind,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ServePredictorArgs {
    /// `heuristic` or `none`; the oracle needs a ground truth and cannot be served.
    #[arg(long, default_value = "heuristic")]
    pub predictor: PredictorKind,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_PORT + 1)]
    pub port: u16,
    #[arg(long)]
    pub stdio: bool,
}

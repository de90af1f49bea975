//! Batch episode runner and comparison metrics.
//!
//! Episode `i` of a batch runs on map `i % maps.len()` with seed
//! `derive_seed(batch_seed, i)`. Episodes may run in parallel; records are
//! always returned in episode order.
//!
//! Results CSV columns, in order:
//! `map_id,planner,predictor,target,steps,success,final_coverage,failure_class,f1`.
//! Curves CSV columns: `step,mean_coverage,std_coverage`.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EnvError, Episode, EpisodeConfig, StartPose};
use crate::floorplan::{mean_std, DatasetManifest};
use crate::grid::{Action, GroundTruthMap, Pose};
use crate::planner::{FrontierConfig, FrontierPlanner, PlannerDecision, PlannerError, UtilityMode};
use crate::predictor::f1_score;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("episode on map {map_id} did not succeed; normalized steps are undefined")]
    NotSuccessful { map_id: String },
    #[error("no maps could be loaded")]
    NoMaps,
    #[error("no area known for map {0}")]
    UnknownArea(String),
    #[error("paired runs on map {map_id} use different coverage targets ({baseline} vs {candidate})")]
    TargetMismatch {
        map_id: String,
        baseline: f64,
        candidate: f64,
    },
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("unknown planner {0:?} (expected frontier, frontier-nearest or random)")]
    UnknownPlanner(String),
}

/// The agent driving an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentKind {
    Frontier {
        config: FrontierConfig,
    },
    /// Uniformly random moves from the episode's random source.
    RandomWalk,
}

impl Default for AgentKind {
    fn default() -> Self {
        AgentKind::Frontier {
            config: FrontierConfig::default(),
        }
    }
}

impl AgentKind {
    pub fn id(&self) -> &'static str {
        match self {
            AgentKind::Frontier { config } if config.utility == UtilityMode::NearestFrontier => "frontier-nearest",
            AgentKind::Frontier { .. } => "frontier",
            AgentKind::RandomWalk => "random",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AgentKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frontier" => Ok(AgentKind::default()),
            "frontier-nearest" => Ok(AgentKind::Frontier {
                config: FrontierConfig {
                    utility: UtilityMode::NearestFrontier,
                    ..FrontierConfig::default()
                },
            }),
            "random" => Ok(AgentKind::RandomWalk),
            other => Err(EvalError::UnknownPlanner(other.to_string())),
        }
    }
}

enum Agent {
    Frontier(FrontierPlanner),
    Random,
}

impl Agent {
    fn new(kind: &AgentKind, cfg: &EpisodeConfig) -> Result<Self, PlannerError> {
        Ok(match kind {
            AgentKind::Frontier { config } => Agent::Frontier(FrontierPlanner::new(*config, cfg.sensor)?),
            AgentKind::RandomWalk => Agent::Random,
        })
    }

    fn decide(&mut self, ep: &mut Episode) -> PlannerDecision {
        match self {
            Agent::Frontier(p) => p.next_action(ep.coverage_map(), ep.state().pose),
            Agent::Random => {
                use rand::Rng;
                PlannerDecision::Move(Action::ALL[ep.rng().gen_range(0..Action::ALL.len())])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureClass {
    None,
    /// The planner found no reachable frontier before the target was met.
    SealedRoom,
    BudgetExhausted,
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureClass::None => "none",
            FailureClass::SealedRoom => "sealed-room",
            FailureClass::BudgetExhausted => "budget-exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: Action,
    pub reward: f64,
    pub coverage: f64,
    pub collided: bool,
    pub newly_exposed: usize,
    /// Pose after the step.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub map_id: String,
    pub planner: String,
    pub predictor: String,
    pub target: f64,
    pub seed: u64,
    pub start: Pose,
    pub initial_coverage: f64,
    pub steps: Vec<StepRecord>,
    pub final_coverage: f64,
    pub success: bool,
    pub failure_class: FailureClass,
    /// F1 of the final coverage-bearing map against the ground truth.
    pub f1: f64,
    pub predictor_failures: usize,
}

impl EpisodeRecord {
    pub fn steps_used(&self) -> usize {
        self.steps.len()
    }

    /// Coverage at step 0 followed by the coverage after each step.
    pub fn coverage_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_coverage)
            .chain(self.steps.iter().map(|s| s.coverage))
            .collect()
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            map_id: self.map_id.clone(),
            planner: self.planner.clone(),
            predictor: self.predictor.clone(),
            target: self.target,
            steps: self.steps_used(),
            success: self.success,
            final_coverage: self.final_coverage,
            failure_class: self.failure_class,
            f1: self.f1,
        }
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub map_id: String,
    pub planner: String,
    pub predictor: String,
    pub target: f64,
    pub steps: usize,
    pub success: bool,
    pub final_coverage: f64,
    pub failure_class: FailureClass,
    pub f1: f64,
}

impl ResultRow {
    pub fn label(&self) -> String {
        format!("{}+{}", self.planner, self.predictor)
    }
}

/// Runs one episode from a random start until it succeeds, exhausts its
/// budget or the agent gives up.
pub fn run_episode(
    map_id: &str,
    gt: Arc<GroundTruthMap>,
    agent: &AgentKind,
    cfg: &EpisodeConfig,
) -> Result<EpisodeRecord, EvalError> {
    let mut driver = Agent::new(agent, cfg)?;
    let (mut ep, _) = Episode::reset(gt.clone(), cfg.clone(), StartPose::Random)?;
    let start = ep.state().pose;
    let initial_coverage = ep.state().exposure;
    let mut steps = Vec::new();
    let mut gave_up = false;
    while !ep.state().done {
        match driver.decide(&mut ep) {
            PlannerDecision::Move(a) => {
                let out = ep.step(a)?;
                steps.push(StepRecord {
                    action: a,
                    reward: out.reward,
                    coverage: out.info.exposure,
                    collided: out.info.collided,
                    newly_exposed: out.info.newly_exposed,
                    pose: ep.state().pose,
                });
            }
            PlannerDecision::Complete | PlannerDecision::Stuck => {
                gave_up = true;
                break;
            }
        }
    }
    let s = ep.state();
    let failure_class = if s.success {
        FailureClass::None
    } else if gave_up {
        FailureClass::SealedRoom
    } else {
        FailureClass::BudgetExhausted
    };
    let f1 = f1_score(ep.coverage_map(), &gt).map_err(EnvError::from)?.score;
    Ok(EpisodeRecord {
        map_id: map_id.to_string(),
        planner: agent.id().to_string(),
        predictor: cfg.predictor.to_string(),
        target: cfg.coverage_target,
        seed: cfg.seed,
        start,
        initial_coverage,
        steps,
        final_coverage: s.exposure,
        success: s.success,
        failure_class,
        f1,
        predictor_failures: ep.predictor_failures(),
    })
}

/// Runs `episodes` episodes over `maps`; `cfg.seed` is the batch seed.
/// `jobs == 0` uses the global thread pool.
pub fn run_on_maps(
    maps: &[(String, Arc<GroundTruthMap>)],
    agent: &AgentKind,
    cfg: &EpisodeConfig,
    episodes: usize,
    jobs: usize,
) -> Result<Vec<EpisodeRecord>, EvalError> {
    if episodes == 0 {
        return Ok(Vec::new());
    }
    if maps.is_empty() {
        return Err(EvalError::NoMaps);
    }
    let run = || {
        (0..episodes)
            .into_par_iter()
            .map(|i| {
                let (id, gt) = &maps[i % maps.len()];
                let ep_cfg = EpisodeConfig {
                    seed: derive_seed(cfg.seed, i as u64),
                    ..cfg.clone()
                };
                run_episode(id, gt.clone(), agent, &ep_cfg)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    if jobs == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?
            .install(run)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedMap {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub records: Vec<EpisodeRecord>,
    pub skipped: Vec<SkippedMap>,
}

/// Loads every map of `manifest`, skipping (and reporting) the ones that fail.
pub fn load_maps(manifest: &DatasetManifest) -> (Vec<(String, Arc<GroundTruthMap>)>, Vec<SkippedMap>) {
    let mut maps = Vec::new();
    let mut skipped = Vec::new();
    for entry in &manifest.entries {
        match manifest.load_map(entry) {
            Ok(m) => maps.push((entry.id.clone(), Arc::new(m))),
            Err(e) => {
                log::warn!("skipping map {}: {e}", entry.id);
                skipped.push(SkippedMap {
                    id: entry.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    (maps, skipped)
}

pub fn run_batch(
    manifest: &DatasetManifest,
    agent: &AgentKind,
    cfg: &EpisodeConfig,
    episodes: usize,
    jobs: usize,
) -> Result<BatchResult, EvalError> {
    let (maps, skipped) = load_maps(manifest);
    let records = run_on_maps(&maps, agent, cfg, episodes, jobs)?;
    Ok(BatchResult { records, skipped })
}

/// Steps per 1,000 interior cells.
pub fn normalized_steps(record: &EpisodeRecord, gt: &GroundTruthMap) -> Result<f64, EvalError> {
    if !record.success {
        return Err(EvalError::NotSuccessful {
            map_id: record.map_id.clone(),
        });
    }
    Ok(per_thousand(record.steps_used(), gt.interior_area()))
}

fn per_thousand(steps: usize, area: usize) -> f64 {
    steps as f64 * 1000.0 / area as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub label: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful episodes.
    pub steps_mean: Option<f64>,
    pub steps_std: Option<f64>,
    pub normalized_steps_mean: Option<f64>,
    pub normalized_steps_std: Option<f64>,
}

pub fn summarize(rows: &[ResultRow], areas: Option<&HashMap<String, usize>>) -> Result<ConfigSummary, EvalError> {
    let label = rows.first().map(ResultRow::label).unwrap_or_default();
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.success).collect();
    let steps: Vec<f64> = ok.iter().map(|r| r.steps as f64).collect();
    let (steps_mean, steps_std) = mean_std_opt(&steps);
    let (normalized_steps_mean, normalized_steps_std) = match areas {
        Some(areas) => {
            let norm = ok
                .iter()
                .map(|r| {
                    areas
                        .get(&r.map_id)
                        .map(|a| per_thousand(r.steps, *a))
                        .ok_or_else(|| EvalError::UnknownArea(r.map_id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            mean_std_opt(&norm)
        }
        None => (None, None),
    };
    Ok(ConfigSummary {
        label,
        episodes: rows.len(),
        successes: ok.len(),
        success_rate: if rows.is_empty() {
            0.0
        } else {
            ok.len() as f64 / rows.len() as f64
        },
        steps_mean,
        steps_std,
        normalized_steps_mean,
        normalized_steps_std,
    })
}

fn mean_std_opt(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(xs);
        (Some(m), Some(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub baseline: ConfigSummary,
    pub candidate: ConfigSummary,
    /// Paired episodes where both configurations succeeded.
    pub common_successes: usize,
    /// Mean and std over paired episodes of `(base - cand) / base * 100`.
    pub reduction_pct_mean: Option<f64>,
    pub reduction_pct_std: Option<f64>,
}

impl ComparisonReport {
    pub fn no_common_successes(&self) -> bool {
        self.reduction_pct_mean.is_none()
    }
}

/// Compares `candidate` against `baseline`.
///
/// Rows pair up by map id and occurrence order within each input. Only pairs
/// where both succeeded contribute to the reduction; pairs whose baseline took
/// zero steps carry no reduction and are left out.
pub fn reduction_report(
    baseline: &[ResultRow],
    candidate: &[ResultRow],
    areas: Option<&HashMap<String, usize>>,
) -> Result<ComparisonReport, EvalError> {
    let mut by_key: HashMap<(&str, usize), &ResultRow> = HashMap::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in baseline {
        let n = seen.entry(r.map_id.as_str()).or_default();
        by_key.insert((r.map_id.as_str(), *n), r);
        *n += 1;
    }
    seen.clear();
    let mut reductions = Vec::new();
    let mut common = 0;
    for c in candidate {
        let n = seen.entry(c.map_id.as_str()).or_default();
        let key = (c.map_id.as_str(), *n);
        *n += 1;
        let Some(b) = by_key.get(&key) else { continue };
        if b.target != c.target {
            return Err(EvalError::TargetMismatch {
                map_id: c.map_id.clone(),
                baseline: b.target,
                candidate: c.target,
            });
        }
        if b.success && c.success {
            common += 1;
            if b.steps > 0 {
                reductions.push((b.steps as f64 - c.steps as f64) / b.steps as f64 * 100.0);
            }
        }
    }
    let (reduction_pct_mean, reduction_pct_std) = mean_std_opt(&reductions);
    Ok(ComparisonReport {
        baseline: summarize(baseline, areas)?,
        candidate: summarize(candidate, areas)?,
        common_successes: common,
        reduction_pct_mean,
        reduction_pct_std,
    })
}

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub configuration: String,
    pub baseline: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub steps_mean: Option<f64>,
    pub steps_std: Option<f64>,
    pub normalized_steps_mean: Option<f64>,
    pub normalized_steps_std: Option<f64>,
    pub common_successes: usize,
    pub reduction_pct_mean: Option<f64>,
    pub reduction_pct_std: Option<f64>,
}

impl ReportRow {
    pub fn from_report(r: &ComparisonReport) -> Self {
        let c = &r.candidate;
        ReportRow {
            configuration: c.label.clone(),
            baseline: r.baseline.label.clone(),
            episodes: c.episodes,
            successes: c.successes,
            success_rate: c.success_rate,
            steps_mean: c.steps_mean,
            steps_std: c.steps_std,
            normalized_steps_mean: c.normalized_steps_mean,
            normalized_steps_std: c.normalized_steps_std,
            common_successes: r.common_successes,
            reduction_pct_mean: r.reduction_pct_mean,
            reduction_pct_std: r.reduction_pct_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_coverage: f64,
    pub std_coverage: f64,
}

/// Mean coverage at every step `0..=max_steps`; an episode that ended early
/// contributes its final coverage from then on.
pub fn exposure_curves(records: &[EpisodeRecord], max_steps: usize) -> Vec<CurvePoint> {
    let curves: Vec<Vec<f64>> = records.iter().map(EpisodeRecord::coverage_curve).collect();
    (0..=max_steps)
        .map(|t| {
            let at: Vec<f64> = curves.iter().map(|c| c[t.min(c.len() - 1)]).collect();
            let (mean_coverage, std_coverage) = if at.is_empty() { (0.0, 0.0) } else { mean_std(&at) };
            CurvePoint {
                step: t,
                mean_coverage,
                std_coverage,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes a header-only CSV for `T` when `rows` is empty.
pub fn write_csv_with_header<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<(), EvalError> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    } else {
        write_csv(rows, out)
    }
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>, EvalError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(EvalError::from)
}

pub const RESULTS_HEADER: [&str; 9] = [
    "map_id",
    "planner",
    "predictor",
    "target",
    "steps",
    "success",
    "final_coverage",
    "failure_class",
    "f1",
];

pub const CURVES_HEADER: [&str; 3] = ["step", "mean_coverage", "std_coverage"];

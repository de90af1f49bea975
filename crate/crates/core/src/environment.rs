//! The mapping MDP.
//!
//! State: the coverage-bearing map plus the agent's pose. Actions: the eight
//! compass moves. Reward per step:
//!
//! ```text
//! r = -1 - collision_penalty                          on collision
//! r = -1 + exposure_coefficient * n * E^4             otherwise
//! ```
//!
//! where `n` is the number of interior cells that became known on the
//! coverage-bearing map this step and `E` the coverage after the step.
//!
//! The coverage-bearing map is the synthesis of the accumulated observations
//! with the thresholded prediction. A predicted cell stays known until a
//! newer prediction or an observation replaces it, so coverage never drops.
//! With the null predictor it equals the raw observation grid.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    coverage_ratio, known_interior_cells, Action, CellClass, CellEncoding, GridError, GroundTruthMap, ObservationGrid,
    Pose,
};
use crate::predictor::{synthesize, MapPredictor, PredictorError, PredictorKind, ThresholdConfig};
use crate::sensor::{accumulate, sense, SensorConfig, SensorError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("start pose ({x}, {y}) is not a free cell")]
    StartBlocked { x: usize, y: usize },
    #[error("map has no free cells")]
    NoFreeCells,
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    collision_penalty: f64,
    exposure_coefficient: f64,
}

impl RewardConfig {
    pub const STEP_PENALTY: f64 = -1.0;
    pub const EXPOSURE_EXPONENT: i32 = 4;

    pub fn new(collision_penalty: f64, exposure_coefficient: f64) -> Result<Self, EnvError> {
        if !(collision_penalty > 1.0 && collision_penalty.is_finite()) {
            return Err(EnvError::Config(format!(
                "collision penalty must exceed 1 (got {collision_penalty})"
            )));
        }
        if !(exposure_coefficient > 0.0 && exposure_coefficient.is_finite()) {
            return Err(EnvError::Config(format!(
                "exposure coefficient must be positive (got {exposure_coefficient})"
            )));
        }
        Ok(Self {
            collision_penalty,
            exposure_coefficient,
        })
    }

    pub fn collision_penalty(&self) -> f64 {
        self.collision_penalty
    }

    pub fn exposure_coefficient(&self) -> f64 {
        self.exposure_coefficient
    }

    pub fn reward(&self, collided: bool, newly_exposed: usize, exposure: f64) -> f64 {
        if collided {
            Self::STEP_PENALTY - self.collision_penalty
        } else {
            Self::STEP_PENALTY
                + self.exposure_coefficient * newly_exposed as f64 * exposure.powi(Self::EXPOSURE_EXPONENT)
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            collision_penalty: 5.0,
            exposure_coefficient: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub coverage_target: f64,
    pub max_steps: usize,
    pub agent_centered_rendering: bool,
    pub predictor: PredictorKind,
    pub thresholds: ThresholdConfig,
    pub sensor: SensorConfig,
    pub reward: RewardConfig,
    pub encoding: CellEncoding,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            coverage_target: 0.98,
            max_steps: 400,
            agent_centered_rendering: true,
            predictor: PredictorKind::Null,
            thresholds: ThresholdConfig::default(),
            sensor: SensorConfig::default(),
            reward: RewardConfig::default(),
            encoding: CellEncoding::default(),
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.coverage_target) {
            return Err(EnvError::Config(format!(
                "coverage target must lie in [0, 1] (got {})",
                self.coverage_target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartPose {
    Random,
    At(Pose),
}

/// Grayscale raster, one byte per cell, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl StateImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Paints `map` with `enc`, agent overpainted. When `centered`, the map is
/// translated so the agent lands on `(width / 2, height / 2)` and cells that
/// fall off the map are painted as obstacles.
pub fn render_map(map: &ObservationGrid, agent: Pose, enc: &CellEncoding, centered: bool) -> StateImage {
    let (w, h) = (map.width(), map.height());
    let mut pixels = Vec::with_capacity(w * h);
    if centered {
        let ox = agent.x as i64 - (w / 2) as i64;
        let oy = agent.y as i64 - (h / 2) as i64;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (mx, my) = (x + ox, y + oy);
                pixels.push(if map.in_bounds(mx, my) {
                    enc.gray(map.get(mx as usize, my as usize))
                } else {
                    enc.obstacle()
                });
            }
        }
        pixels[(h / 2) * w + w / 2] = enc.agent();
    } else {
        pixels.extend(map.cells().iter().map(|c| enc.gray(*c)));
        pixels[agent.y * w + agent.x] = enc.agent();
    }
    StateImage {
        width: w,
        height: h,
        pixels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub pose: Pose,
    /// Accumulated sensor readings.
    pub observed: ObservationGrid,
    /// Coverage-bearing map.
    pub synthesized: ObservationGrid,
    pub step_count: usize,
    /// Coverage of the coverage-bearing map.
    pub exposure: f64,
    /// Coverage of the raw observations alone.
    pub observed_exposure: f64,
    pub done: bool,
    pub success: bool,
}

/// What happened during one step; enough to recompute the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub action: Action,
    pub collided: bool,
    pub newly_exposed: usize,
    pub exposure: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub image: StateImage,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One running episode on one map.
pub struct Episode {
    gt: Arc<GroundTruthMap>,
    cfg: EpisodeConfig,
    predictor: MapPredictor,
    rng: ChaCha8Rng,
    state: EpisodeState,
}

impl Episode {
    pub fn reset(
        gt: Arc<GroundTruthMap>,
        cfg: EpisodeConfig,
        start: StartPose,
    ) -> Result<(Self, StateImage), EnvError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pose = match start {
            StartPose::At(p) => {
                if !gt.is_free(p) {
                    return Err(EnvError::StartBlocked { x: p.x, y: p.y });
                }
                p
            }
            StartPose::Random => {
                let free: Vec<Pose> = gt.free_cells().collect();
                if free.is_empty() {
                    return Err(EnvError::NoFreeCells);
                }
                free[rng.gen_range(0..free.len())]
            }
        };
        let inner = cfg.predictor.build(Some(gt.clone()))?;
        let mut predictor = MapPredictor::new(inner, cfg.thresholds);

        let mut observed = ObservationGrid::with_known_boundary(&gt);
        accumulate(&mut observed, &sense(&gt, pose, &cfg.sensor)?)?;
        let predicted = predictor.predict_map(&observed);
        let synthesized = synthesize(&observed, &predicted)?;
        let exposure = coverage_ratio(&synthesized, &gt)?;
        let observed_exposure = coverage_ratio(&observed, &gt)?;
        let success = exposure >= cfg.coverage_target;
        let state = EpisodeState {
            pose,
            observed,
            synthesized,
            step_count: 0,
            exposure,
            observed_exposure,
            done: success || cfg.max_steps == 0,
            success,
        };
        let episode = Self {
            gt,
            cfg,
            predictor,
            rng,
            state,
        };
        let image = episode.render();
        Ok((episode, image))
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let gt = &self.gt;
        let s = &mut self.state;
        let target = s
            .pose
            .offset(action, gt.width(), gt.height())
            .filter(|p| gt.get(p.x, p.y) == CellClass::Free);
        let (collided, newly_exposed) = match target {
            None => (true, 0),
            Some(p) => {
                s.pose = p;
                let seen = sense(gt, p, &self.cfg.sensor)?;
                let observed_new = accumulate(&mut s.observed, &seen)?;
                let before = known_interior_cells(&s.synthesized, gt);
                if observed_new > 0 {
                    let predicted = self.predictor.predict_map(&s.observed);
                    let fresh = synthesize(&s.observed, &predicted)?;
                    // Cells the new prediction leaves unknown keep their previous value.
                    s.synthesized = synthesize(&fresh, &s.synthesized)?;
                }
                let after = known_interior_cells(&s.synthesized, gt);
                s.exposure = coverage_ratio(&s.synthesized, gt)?;
                s.observed_exposure = coverage_ratio(&s.observed, gt)?;
                (false, after - before)
            }
        };
        s.step_count += 1;
        let reward = self.cfg.reward.reward(collided, newly_exposed, s.exposure);
        s.success = s.exposure >= self.cfg.coverage_target;
        s.done = s.success || s.step_count >= self.cfg.max_steps;
        let info = StepInfo {
            action,
            collided,
            newly_exposed,
            exposure: s.exposure,
            reward,
        };
        Ok(StepOutcome {
            image: self.render(),
            reward,
            done: self.state.done,
            info,
        })
    }

    pub fn render(&self) -> StateImage {
        render_map(
            &self.state.synthesized,
            self.state.pose,
            &self.cfg.encoding,
            self.cfg.agent_centered_rendering,
        )
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn ground_truth(&self) -> &Arc<GroundTruthMap> {
        &self.gt
    }

    /// The map exploration decisions are made on.
    pub fn coverage_map(&self) -> &ObservationGrid {
        &self.state.synthesized
    }

    /// Predictions that fell back to the null predictor so far.
    pub fn predictor_failures(&self) -> usize {
        self.predictor.failures()
    }

    /// Episode-scoped random source, for agents that need one.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

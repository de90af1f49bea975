//! Non-learned predictors used as test doubles and baselines.

use std::sync::Arc;

use super::{Predictor, PredictorError, ProbabilityGrid};
use crate::grid::{CellClass, GroundTruthMap, ObservationGrid};

/// Knows nothing: 0.5 everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPredictor;

impl Predictor for NullPredictor {
    fn predict(&mut self, obs: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError> {
        Ok(ProbabilityGrid::uniform(obs.width(), obs.height(), 0.5))
    }
}

/// Reads the answer off the ground truth, softened by `flip_rate`.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    gt: Arc<GroundTruthMap>,
    flip_rate: f64,
}

impl NoisyOracle {
    pub fn new(gt: Arc<GroundTruthMap>, flip_rate: f64) -> Result<Self, PredictorError> {
        if !(0.0..0.5).contains(&flip_rate) {
            return Err(PredictorError::BadFlipRate(flip_rate));
        }
        Ok(Self { gt, flip_rate })
    }
}

impl Predictor for NoisyOracle {
    fn predict(&mut self, obs: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError> {
        self.gt.same_shape(obs.width(), obs.height())?;
        let p = self
            .gt
            .cells()
            .iter()
            .map(|c| {
                if *c == CellClass::Free {
                    self.flip_rate
                } else {
                    1.0 - self.flip_rate
                }
            })
            .collect();
        ProbabilityGrid::new(obs.width(), obs.height(), p)
    }
}

/// Straight-wall continuation heuristic.
///
/// Observed horizontal or vertical obstacle runs of at least `MIN_RUN` cells
/// are extended into unknown space for up to `EXTEND` cells, with probability
/// 0.9, 0.8, ... along the extension. Unknown cells next to an observed free
/// cell get 0.1 unless a wall extension claims them. Everything else is 0.5.
/// The constants are arbitrary; they only need to produce a deterministic,
/// non-trivial field.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicWallExtend;

const MIN_RUN: usize = 3;
const EXTEND: usize = 5;
const DECAY: f64 = 0.1;
const NEAR_FREE: f64 = 0.1;

impl Predictor for HeuristicWallExtend {
    fn predict(&mut self, obs: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError> {
        let (w, h) = (obs.width(), obs.height());
        let mut p = vec![0.5; w * h];

        for y in 0..h {
            for x in 0..w {
                if obs.get(x, y) != CellClass::Unknown {
                    continue;
                }
                let near_free = neighbors8(x, y, w, h).any(|(nx, ny)| obs.get(nx, ny) == CellClass::Free);
                if near_free {
                    p[y * w + x] = NEAR_FREE;
                }
            }
        }

        let mut wall = vec![0.0f64; w * h];
        // horizontal runs
        for y in 0..h {
            let mut x = 0;
            while x < w {
                if obs.get(x, y) != CellClass::Obstacle {
                    x += 1;
                    continue;
                }
                let start = x;
                while x < w && obs.get(x, y) == CellClass::Obstacle {
                    x += 1;
                }
                if x - start >= MIN_RUN {
                    extend(obs, &mut wall, (start as i64, y as i64), (-1, 0));
                    extend(obs, &mut wall, (x as i64 - 1, y as i64), (1, 0));
                }
            }
        }
        // vertical runs
        for x in 0..w {
            let mut y = 0;
            while y < h {
                if obs.get(x, y) != CellClass::Obstacle {
                    y += 1;
                    continue;
                }
                let start = y;
                while y < h && obs.get(x, y) == CellClass::Obstacle {
                    y += 1;
                }
                if y - start >= MIN_RUN {
                    extend(obs, &mut wall, (x as i64, start as i64), (0, -1));
                    extend(obs, &mut wall, (x as i64, y as i64 - 1), (0, 1));
                }
            }
        }
        for (pi, wi) in p.iter_mut().zip(&wall) {
            if *wi > 0.0 {
                *pi = *wi;
            }
        }
        ProbabilityGrid::new(w, h, p)
    }
}

fn extend(obs: &ObservationGrid, wall: &mut [f64], end: (i64, i64), dir: (i64, i64)) {
    for k in 1..=EXTEND {
        let (x, y) = (end.0 + dir.0 * k as i64, end.1 + dir.1 * k as i64);
        if !obs.in_bounds(x, y) || obs.get(x as usize, y as usize) != CellClass::Unknown {
            break;
        }
        let i = y as usize * obs.width() + x as usize;
        let v = 1.0 - DECAY * k as f64;
        if v > wall[i] {
            wall[i] = v;
        }
    }
}

fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|d| *d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then_some((nx as usize, ny as usize))
        })
}

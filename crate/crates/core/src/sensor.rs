//! 360° peripheral range sensing by exact grid traversal.
//!
//! Beam `k` points at `k * angular_interval` degrees, 0° = North, clockwise.
//! Each beam starts at the center of the agent's cell and walks cell
//! boundaries incrementally. Cells are in range when their center lies within
//! `max_range` of the agent's cell center (inclusive). A beam that crosses a
//! cell corner exactly steps diagonally into the opposite cell, without
//! visiting either side cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellClass, GroundTruthMap, ObservationGrid, Pose};

/// Two boundary crossings closer than this (in ray length) count as a corner.
const CORNER_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("sensor config: beam_count * angular_interval must equal 360 (got {beam_count} x {angular_interval})")]
    BadAngles { beam_count: u32, angular_interval: f64 },
    #[error("sensor config: max_range must be finite and >= 0 (got {0})")]
    BadRange(f64),
    #[error("pose ({x}, {y}) is not on a free cell")]
    PoseBlocked { x: usize, y: usize },
    #[error("observation at ({x}, {y}) is out of bounds")]
    OutOfBounds { x: usize, y: usize },
    #[error("observation at ({x}, {y}) says {new:?} but the grid already holds {old:?}")]
    Contradiction {
        x: usize,
        y: usize,
        old: CellClass,
        new: CellClass,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    beam_count: u32,
    angular_interval: f64,
    max_range: f64,
}

impl SensorConfig {
    pub fn new(beam_count: u32, angular_interval: f64, max_range: f64) -> Result<Self, SensorError> {
        if beam_count == 0 || (beam_count as f64 * angular_interval - 360.0).abs() > 1e-9 {
            return Err(SensorError::BadAngles {
                beam_count,
                angular_interval,
            });
        }
        if !max_range.is_finite() || max_range < 0.0 {
            return Err(SensorError::BadRange(max_range));
        }
        Ok(Self {
            beam_count,
            angular_interval,
            max_range,
        })
    }

    /// Evenly spaced beams covering the full circle.
    pub fn with_range(beam_count: u32, max_range: f64) -> Result<Self, SensorError> {
        Self::new(beam_count, 360.0 / beam_count as f64, max_range)
    }

    pub fn beam_count(&self) -> u32 {
        self.beam_count
    }

    pub fn angular_interval(&self) -> f64 {
        self.angular_interval
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    /// Unit direction `(dx, dy)` of beam `k` in grid coordinates (y down).
    pub fn beam_direction(&self, k: u32) -> (f64, f64) {
        let theta = (k as f64 * self.angular_interval).to_radians();
        (theta.sin(), -theta.cos())
    }

    pub(crate) fn in_range(&self, from: Pose, x: usize, y: usize) -> bool {
        let dx = x as f64 - from.x as f64;
        let dy = y as f64 - from.y as f64;
        dx * dx + dy * dy <= self.max_range * self.max_range
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            beam_count: 16,
            angular_interval: 22.5,
            max_range: 20.0,
        }
    }
}

/// One sensed cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub y: usize,
    pub x: usize,
    pub class: CellClass,
}

/// Walks every beam from `origin` over a `width x height` grid.
///
/// `blocks(x, y)` decides whether a cell stops the beam. `visit(x, y, blocked)`
/// is called for every in-range cell the beam reports, including the blocking
/// cell that terminates it. The origin cell itself is not visited.
pub(crate) fn trace_beams<B, V>(
    width: usize,
    height: usize,
    origin: Pose,
    cfg: &SensorConfig,
    mut blocks: B,
    mut visit: V,
) where
    B: FnMut(usize, usize) -> bool,
    V: FnMut(usize, usize, bool),
{
    // Cells entered past this ray length cannot have their center in range.
    let t_limit = cfg.max_range + 1.0;
    for k in 0..cfg.beam_count {
        let (dx, dy) = cfg.beam_direction(k);
        let (step_x, mut t_max_x, t_delta_x) = axis_setup(dx);
        let (step_y, mut t_max_y, t_delta_y) = axis_setup(dy);
        let mut cx = origin.x as i64;
        let mut cy = origin.y as i64;
        loop {
            let t;
            if (t_max_x - t_max_y).abs() <= CORNER_EPS {
                t = t_max_x.min(t_max_y);
                cx += step_x;
                cy += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            } else if t_max_x < t_max_y {
                t = t_max_x;
                cx += step_x;
                t_max_x += t_delta_x;
            } else {
                t = t_max_y;
                cy += step_y;
                t_max_y += t_delta_y;
            }
            if t > t_limit || cx < 0 || cy < 0 || cx >= width as i64 || cy >= height as i64 {
                break;
            }
            let (x, y) = (cx as usize, cy as usize);
            let blocked = blocks(x, y);
            if cfg.in_range(origin, x, y) {
                visit(x, y, blocked);
            }
            if blocked {
                break;
            }
        }
    }
}

fn axis_setup(d: f64) -> (i64, f64, f64) {
    if d.abs() < 1e-12 {
        (0, f64::INFINITY, f64::INFINITY)
    } else {
        let step = if d > 0.0 { 1 } else { -1 };
        // The beam starts at the cell center, half a cell from either boundary.
        (step, 0.5 / d.abs(), 1.0 / d.abs())
    }
}

/// Cells observed from `pose`, sorted by `(y, x)` without duplicates.
/// Exterior hits are reported as obstacles.
pub fn sense(gt: &GroundTruthMap, pose: Pose, cfg: &SensorConfig) -> Result<Vec<Observation>, SensorError> {
    if !gt.is_free(pose) {
        return Err(SensorError::PoseBlocked { x: pose.x, y: pose.y });
    }
    let mut out = vec![Observation {
        x: pose.x,
        y: pose.y,
        class: CellClass::Free,
    }];
    trace_beams(
        gt.width(),
        gt.height(),
        pose,
        cfg,
        |x, y| gt.get(x, y).is_blocking(),
        |x, y, blocked| {
            out.push(Observation {
                x,
                y,
                class: if blocked { CellClass::Obstacle } else { CellClass::Free },
            })
        },
    );
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Merges observations into `obs`; returns how many cells went from unknown to known.
///
/// Known cells are never rewritten. A contradicting observation is rejected
/// before anything is written.
pub fn accumulate(obs: &mut ObservationGrid, observations: &[Observation]) -> Result<usize, SensorError> {
    for o in observations {
        if o.x >= obs.width() || o.y >= obs.height() {
            return Err(SensorError::OutOfBounds { x: o.x, y: o.y });
        }
        let new = normalize(o.class);
        let old = obs.get(o.x, o.y);
        if old.is_known() && new.is_known() && old != new {
            return Err(SensorError::Contradiction {
                x: o.x,
                y: o.y,
                old,
                new,
            });
        }
    }
    let mut written = 0;
    for o in observations {
        let new = normalize(o.class);
        if !obs.get(o.x, o.y).is_known() && new.is_known() {
            obs.set(o.x, o.y, new);
            written += 1;
        }
    }
    Ok(written)
}

fn normalize(c: CellClass) -> CellClass {
    if c == CellClass::Exterior {
        CellClass::Obstacle
    } else {
        c
    }
}

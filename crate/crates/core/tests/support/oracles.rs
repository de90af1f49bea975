//! Brute-force references. Deliberately naive; they share no code with the
//! implementations they check.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use gridscout_core::grid::{CellClass, GroundTruthMap, Pose};

/// Step length of the ray march.
pub const MARCH_STEP: f64 = 0.01;

/// Senses by sampling each beam every `MARCH_STEP` cells from the agent's
/// cell center. Returns `(x, y, blocked)` for the origin and every reported cell.
pub fn ray_march_sense(gt: &GroundTruthMap, pose: Pose, beams: u32, range: f64) -> BTreeSet<(usize, usize, bool)> {
    let mut seen = BTreeSet::new();
    seen.insert((pose.x, pose.y, false));
    let ox = pose.x as f64 + 0.5;
    let oy = pose.y as f64 + 0.5;
    let samples = ((range + 2.0) / MARCH_STEP).ceil() as usize;
    for k in 0..beams {
        let theta = (k as f64 * 360.0 / beams as f64).to_radians();
        let (dx, dy) = (theta.sin(), -theta.cos());
        let mut last = (pose.x as i64, pose.y as i64);
        for i in 1..=samples {
            let t = i as f64 * MARCH_STEP;
            let cx = (ox + t * dx).floor() as i64;
            let cy = (oy + t * dy).floor() as i64;
            if (cx, cy) == last {
                continue;
            }
            last = (cx, cy);
            if cx < 0 || cy < 0 || cx >= gt.width() as i64 || cy >= gt.height() as i64 {
                break;
            }
            let (x, y) = (cx as usize, cy as usize);
            let blocked = matches!(gt.get(x, y), CellClass::Obstacle | CellClass::Exterior);
            let ddx = x as f64 - pose.x as f64;
            let ddy = y as f64 - pose.y as f64;
            if (ddx * ddx + ddy * ddy).sqrt() <= range {
                seen.insert((x, y, blocked));
            }
            if blocked {
                break;
            }
        }
    }
    seen
}

/// Reward recomputed from its recorded inputs.
pub fn reward_reference(collided: bool, n: usize, exposure: f64, collision_penalty: f64, coefficient: f64) -> f64 {
    if collided {
        -1.0 - collision_penalty
    } else {
        -1.0 + coefficient * (n as f64) * exposure.powi(4)
    }
}

/// Dijkstra over the 8-connected grid of `passable` cells, unit step cost.
/// A diagonal move is allowed unless both orthogonal neighbours are impassable.
/// Returns the cost to every cell (`None` if unreachable).
pub fn dijkstra(
    width: usize,
    height: usize,
    passable: impl Fn(usize, usize) -> bool,
    start: (usize, usize),
) -> Vec<Option<usize>> {
    let mut dist = vec![None; width * height];
    let mut heap = BinaryHeap::new();
    dist[start.1 * width + start.0] = Some(0);
    heap.push(Reverse((0usize, start.0, start.1)));
    while let Some(Reverse((d, x, y))) = heap.pop() {
        if dist[y * width + x] != Some(d) {
            continue;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !passable(nx, ny) {
                    continue;
                }
                if dx != 0 && dy != 0 && !passable(nx, y) && !passable(x, ny) {
                    continue;
                }
                let nd = d + 1;
                let slot = &mut dist[ny * width + nx];
                if slot.is_none_or(|old| nd < old) {
                    *slot = Some(nd);
                    heap.push(Reverse((nd, nx, ny)));
                }
            }
        }
    }
    dist
}

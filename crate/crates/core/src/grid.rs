//! Grid data types shared by every other module.
//!
//! Coordinate convention, used everywhere in this crate: `x` is the column,
//! `y` is the row, the origin is the top-left cell and `y` grows downward.
//! Cells are stored row-major (`index = y * width + x`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("cell buffer holds {got} cells, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("cell ({x}, {y}) holds {class:?}, which is not allowed in this grid")]
    InvalidClass { x: usize, y: usize, class: CellClass },
    #[error("encoding must satisfy free < unknown < obstacle < agent, got ({free}, {unknown}, {obstacle}, {agent})")]
    InvalidEncoding {
        free: u8,
        unknown: u8,
        obstacle: u8,
        agent: u8,
    },
    #[error("ground truth has no interior cells")]
    EmptyInterior,
}

/// Class of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellClass {
    Free,
    Obstacle,
    Unknown,
    /// Outside the building contour. Only ground truth carries this class.
    Exterior,
}

impl CellClass {
    /// Obstacle and exterior cells stop beams and block motion.
    pub fn is_blocking(self) -> bool {
        matches!(self, CellClass::Obstacle | CellClass::Exterior)
    }

    pub fn is_known(self) -> bool {
        self != CellClass::Unknown
    }

    /// Byte used by the predictor wire protocol (0 = free, 1 = obstacle, 2 = unknown).
    pub fn wire_byte(self) -> u8 {
        match self {
            CellClass::Free => 0,
            CellClass::Obstacle | CellClass::Exterior => 1,
            CellClass::Unknown => 2,
        }
    }

    pub fn from_wire_byte(b: u8) -> Option<CellClass> {
        match b {
            0 => Some(CellClass::Free),
            1 => Some(CellClass::Obstacle),
            2 => Some(CellClass::Unknown),
            _ => None,
        }
    }
}

/// Gray levels used to paint a state image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellEncoding {
    free: u8,
    unknown: u8,
    obstacle: u8,
    agent: u8,
}

impl CellEncoding {
    pub fn new(free: u8, unknown: u8, obstacle: u8, agent: u8) -> Result<Self, GridError> {
        if free < unknown && unknown < obstacle && obstacle < agent {
            Ok(Self {
                free,
                unknown,
                obstacle,
                agent,
            })
        } else {
            Err(GridError::InvalidEncoding {
                free,
                unknown,
                obstacle,
                agent,
            })
        }
    }

    pub fn free(&self) -> u8 {
        self.free
    }

    pub fn unknown(&self) -> u8 {
        self.unknown
    }

    pub fn obstacle(&self) -> u8 {
        self.obstacle
    }

    pub fn agent(&self) -> u8 {
        self.agent
    }

    /// Gray level for a map cell. Exterior paints like an obstacle.
    pub fn gray(&self, class: CellClass) -> u8 {
        match class {
            CellClass::Free => self.free,
            CellClass::Unknown => self.unknown,
            CellClass::Obstacle | CellClass::Exterior => self.obstacle,
        }
    }
}

impl Default for CellEncoding {
    fn default() -> Self {
        Self {
            free: 0,
            unknown: 15,
            obstacle: 30,
            agent: 255,
        }
    }
}

/// The eight compass moves, indexed 0..8 clockwise from North.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::N,
        Action::NE,
        Action::E,
        Action::SE,
        Action::S,
        Action::SW,
        Action::W,
        Action::NW,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Action> {
        Action::ALL.get(i as usize).copied()
    }

    pub fn displacement(self) -> (i32, i32) {
        displacement(self)
    }

    /// Action that moves by `(dx, dy)`, if it is a unit compass step.
    pub fn from_displacement(dx: i32, dy: i32) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.displacement() == (dx, dy))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::N => "N",
            Action::NE => "NE",
            Action::E => "E",
            Action::SE => "SE",
            Action::S => "S",
            Action::SW => "SW",
            Action::W => "W",
            Action::NW => "NW",
        }
    }
}

/// Unit displacement of an action; North is `(0, -1)` because `y` grows downward.
pub fn displacement(a: Action) -> (i32, i32) {
    match a {
        Action::N => (0, -1),
        Action::NE => (1, -1),
        Action::E => (1, 0),
        Action::SE => (1, 1),
        Action::S => (0, 1),
        Action::SW => (-1, 1),
        Action::W => (-1, 0),
        Action::NW => (-1, -1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
}

impl Pose {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Neighbor reached by `a`, or `None` when it falls off the grid.
    pub fn offset(self, a: Action, width: usize, height: usize) -> Option<Pose> {
        let (dx, dy) = a.displacement();
        let nx = self.x as i64 + dx as i64;
        let ny = self.y as i64 + dy as i64;
        if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
            None
        } else {
            Some(Pose::new(nx as usize, ny as usize))
        }
    }
}

/// Immutable rasterized floorplan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMap {
    width: usize,
    height: usize,
    cells: Vec<CellClass>,
    interior_area: usize,
    free_area: usize,
}

impl GroundTruthMap {
    /// Builds a map from row-major cells. `Unknown` is rejected.
    pub fn new(width: usize, height: usize, cells: Vec<CellClass>) -> Result<Self, GridError> {
        if cells.len() != width * height {
            return Err(GridError::BadLength {
                expected: width * height,
                got: cells.len(),
            });
        }
        if let Some(i) = cells.iter().position(|c| *c == CellClass::Unknown) {
            return Err(GridError::InvalidClass {
                x: i % width,
                y: i / width,
                class: CellClass::Unknown,
            });
        }
        let free_area = cells.iter().filter(|c| **c == CellClass::Free).count();
        let interior_area = free_area + cells.iter().filter(|c| **c == CellClass::Obstacle).count();
        Ok(Self {
            width,
            height,
            cells,
            interior_area,
            free_area,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[CellClass] {
        &self.cells
    }

    /// Free plus obstacle cells: the building's exposable area.
    pub fn interior_area(&self) -> usize {
        self.interior_area
    }

    pub fn free_area(&self) -> usize {
        self.free_area
    }

    pub fn wall_area(&self) -> usize {
        self.interior_area - self.free_area
    }

    /// Obstacle cells as a fraction of the interior area.
    pub fn wall_fraction(&self) -> f64 {
        if self.interior_area == 0 {
            0.0
        } else {
            self.wall_area() as f64 / self.interior_area as f64
        }
    }

    pub fn get(&self, x: usize, y: usize) -> CellClass {
        self.cells[y * self.width + x]
    }

    /// Class at signed coordinates; off-grid reads as exterior.
    pub fn get_signed(&self, x: i64, y: i64) -> CellClass {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            CellClass::Exterior
        } else {
            self.get(x as usize, y as usize)
        }
    }

    pub fn is_interior(&self, x: usize, y: usize) -> bool {
        matches!(self.get(x, y), CellClass::Free | CellClass::Obstacle)
    }

    pub fn is_free(&self, p: Pose) -> bool {
        p.x < self.width && p.y < self.height && self.get(p.x, p.y) == CellClass::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Pose> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == CellClass::Free)
            .map(move |(i, _)| Pose::new(i % self.width, i / self.width))
    }

    pub(crate) fn same_shape(&self, w: usize, h: usize) -> Result<(), GridError> {
        if self.width == w && self.height == h {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch {
                left_w: w,
                left_h: h,
                right_w: self.width,
                right_h: self.height,
            })
        }
    }
}

/// Free / obstacle / unknown raster. Used for accumulated observations,
/// thresholded predictions and synthesized maps alike.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObservationGrid {
    width: usize,
    height: usize,
    cells: Vec<CellClass>,
}

impl ObservationGrid {
    pub fn unknown(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![CellClass::Unknown; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<CellClass>) -> Result<Self, GridError> {
        if cells.len() != width * height {
            return Err(GridError::BadLength {
                expected: width * height,
                got: cells.len(),
            });
        }
        if let Some(i) = cells.iter().position(|c| *c == CellClass::Exterior) {
            return Err(GridError::InvalidClass {
                x: i % width,
                y: i / width,
                class: CellClass::Exterior,
            });
        }
        Ok(Self { width, height, cells })
    }

    /// All-unknown grid with every exterior cell of `gt` written as an obstacle:
    /// the building outline is known before exploration starts.
    pub fn with_known_boundary(gt: &GroundTruthMap) -> Self {
        let cells = gt
            .cells()
            .iter()
            .map(|c| match c {
                CellClass::Exterior => CellClass::Obstacle,
                _ => CellClass::Unknown,
            })
            .collect();
        Self {
            width: gt.width(),
            height: gt.height(),
            cells,
        }
    }

    /// Fully observed copy of a ground truth map.
    pub fn from_ground_truth(gt: &GroundTruthMap) -> Self {
        let cells = gt
            .cells()
            .iter()
            .map(|c| match c {
                CellClass::Free => CellClass::Free,
                _ => CellClass::Obstacle,
            })
            .collect();
        Self {
            width: gt.width(),
            height: gt.height(),
            cells,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[CellClass] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> CellClass {
        self.cells[y * self.width + x]
    }

    /// Overwrites a cell. Exterior is mapped to obstacle.
    pub fn set(&mut self, x: usize, y: usize, class: CellClass) {
        let class = if class == CellClass::Exterior {
            CellClass::Obstacle
        } else {
            class
        };
        self.cells[y * self.width + x] = class;
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == CellClass::Free
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|c| **c == class).count()
    }

    pub fn same_shape(&self, other: &ObservationGrid) -> Result<(), GridError> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(GridError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }
}

/// Fraction of the building interior that is known on `obs`.
pub fn coverage_ratio(obs: &ObservationGrid, gt: &GroundTruthMap) -> Result<f64, GridError> {
    gt.same_shape(obs.width(), obs.height())?;
    if gt.interior_area() == 0 {
        return Err(GridError::EmptyInterior);
    }
    Ok(known_interior_cells(obs, gt) as f64 / gt.interior_area() as f64)
}

/// Number of interior cells that are not unknown on `obs`. Shapes must match.
pub(crate) fn known_interior_cells(obs: &ObservationGrid, gt: &GroundTruthMap) -> usize {
    obs.cells()
        .iter()
        .zip(gt.cells())
        .filter(|(o, g)| o.is_known() && matches!(g, CellClass::Free | CellClass::Obstacle))
        .count()
}

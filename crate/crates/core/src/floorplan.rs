//! Procedural floorplans, the ASCII map format and dataset manifests.
//!
//! Generated maps are an `interior_width x interior_height` building wrapped
//! in a one-cell exterior ring. The interior is split by recursive binary
//! space partitioning into rectangular rooms separated by one-cell walls, each
//! wall pierced by a single door.
//!
//! ASCII map format (UTF-8, LF line endings):
//!
//! ```text
//! W H
//! <H lines of W characters: '#' obstacle, '.' free, '~' exterior>
//! ```

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellClass, GridError, GroundTruthMap};
use crate::seed::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MANIFEST_HEADER: &str = "GRIDMAP-DATASET v1";

#[derive(Debug, Error)]
pub enum FloorplanError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no map within wall fraction {target} +/- {tolerance} after {attempts} attempts")]
    RetriesExhausted { target: f64, tolerance: f64, attempts: u32 },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("map has no free cells")]
    EmptyMap,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Member {
        path: PathBuf,
        #[source]
        source: Box<FloorplanError>,
    },
    #[error("{} dataset member(s) failed to load: {}", .0.len(), .0.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Aggregate(Vec<(PathBuf, FloorplanError)>),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FloorplanError + '_ {
    move |source| FloorplanError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub interior_width: usize,
    pub interior_height: usize,
    /// Rooms are never narrower than this.
    pub min_room_side: usize,
    /// Regions with a side longer than this keep being split.
    pub max_room_side: usize,
    /// Inclusive door width bounds.
    pub door_width_range: (usize, usize),
    pub target_wall_fraction: f64,
    pub wall_fraction_tolerance: f64,
    /// When false any partition is accepted (e.g. single-room maps).
    pub check_wall_fraction: bool,
    pub max_attempts: u32,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            interior_width: 62,
            interior_height: 60,
            min_room_side: 8,
            max_room_side: 27,
            door_width_range: (2, 3),
            target_wall_fraction: 0.073,
            wall_fraction_tolerance: 0.004,
            check_wall_fraction: true,
            max_attempts: 1000,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), FloorplanError> {
        let bad = |m: &str| Err(FloorplanError::InvalidConfig(m.to_string()));
        if self.interior_width == 0 || self.interior_height == 0 {
            return bad("interior must be non-empty");
        }
        if self.min_room_side == 0 {
            return bad("min_room_side must be >= 1");
        }
        let (lo, hi) = self.door_width_range;
        if lo == 0 || lo > hi {
            return bad("door_width_range must satisfy 1 <= min <= max");
        }
        if hi > self.min_room_side {
            return bad("doors cannot be wider than min_room_side");
        }
        if !(0.0..=1.0).contains(&self.target_wall_fraction) || self.wall_fraction_tolerance < 0.0 {
            return bad("wall fraction target must lie in [0, 1] with a non-negative tolerance");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[cfg_attr(not(test), allow(dead_code))]
struct Door {
    x: usize,
    y: usize,
    width: usize,
    vertical_wall: bool,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

/// Generates a map; retries with derived sub-seeds until the wall fraction is in band.
pub fn generate_floorplan(cfg: &GeneratorConfig) -> Result<GroundTruthMap, FloorplanError> {
    generate_with_doors(cfg).map(|(map, _)| map)
}

fn generate_with_doors(cfg: &GeneratorConfig) -> Result<(GroundTruthMap, Vec<Door>), FloorplanError> {
    cfg.validate()?;
    for attempt in 0..cfg.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, attempt as u64));
        let (map, doors) = partition_once(cfg, &mut rng)?;
        if !is_four_connected(&map) {
            continue;
        }
        if !cfg.check_wall_fraction
            || (map.wall_fraction() - cfg.target_wall_fraction).abs() <= cfg.wall_fraction_tolerance
        {
            return Ok((map, doors));
        }
    }
    Err(FloorplanError::RetriesExhausted {
        target: cfg.target_wall_fraction,
        tolerance: cfg.wall_fraction_tolerance,
        attempts: cfg.max_attempts,
    })
}

fn partition_once(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(GroundTruthMap, Vec<Door>), FloorplanError> {
    let w = cfg.interior_width + 2;
    let h = cfg.interior_height + 2;
    let mut cells = vec![CellClass::Exterior; w * h];
    for y in 1..=cfg.interior_height {
        for x in 1..=cfg.interior_width {
            cells[y * w + x] = CellClass::Free;
        }
    }
    let mut stack = vec![Rect {
        x: 1,
        y: 1,
        w: cfg.interior_width,
        h: cfg.interior_height,
    }];
    let mut doors = Vec::new();
    while let Some(r) = stack.pop() {
        if let Some((a, b, door)) = split(&mut cells, w, r, cfg, rng) {
            doors.push(door);
            stack.push(b);
            stack.push(a);
        }
    }
    Ok((GroundTruthMap::new(w, h, cells)?, doors))
}

/// Splits `r` with one wall and a door; returns the two sub-rooms and the door.
fn split(
    cells: &mut [CellClass],
    stride: usize,
    r: Rect,
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(Rect, Rect, Door)> {
    let min = cfg.min_room_side;
    let can_v = r.w > 2 * min;
    let can_h = r.h > 2 * min;
    if !can_v && !can_h {
        return None;
    }
    if r.w <= cfg.max_room_side && r.h <= cfg.max_room_side {
        return None;
    }
    let vertical = match (can_v, can_h) {
        (true, false) => true,
        (false, true) => false,
        _ => {
            if r.w > cfg.max_room_side && r.h <= cfg.max_room_side {
                true
            } else if r.h > cfg.max_room_side && r.w <= cfg.max_room_side {
                false
            } else {
                rng.gen_range(0..(r.w + r.h)) < r.w
            }
        }
    };
    let blocked = |cells: &[CellClass], x: usize, y: usize| cells[y * stride + x] != CellClass::Free;

    // Wall endpoints must land on solid cells of the enclosing walls so that
    // no existing door is narrowed.
    let candidates: Vec<usize> = if vertical {
        (min..r.w - min)
            .filter(|k| blocked(cells, r.x + k, r.y - 1) && blocked(cells, r.x + k, r.y + r.h))
            .collect()
    } else {
        (min..r.h - min)
            .filter(|k| blocked(cells, r.x - 1, r.y + k) && blocked(cells, r.x + r.w, r.y + k))
            .collect()
    };
    if candidates.is_empty() {
        return None;
    }
    let k = candidates[rng.gen_range(0..candidates.len())];
    let span = if vertical { r.h } else { r.w };
    let (lo, hi) = cfg.door_width_range;
    let door = rng.gen_range(lo..=hi).min(span);
    let door_at = rng.gen_range(0..=span - door);
    for i in 0..span {
        if i >= door_at && i < door_at + door {
            continue;
        }
        let (x, y) = if vertical {
            (r.x + k, r.y + i)
        } else {
            (r.x + i, r.y + k)
        };
        cells[y * stride + x] = CellClass::Obstacle;
    }
    let door = if vertical {
        Door {
            x: r.x + k,
            y: r.y + door_at,
            width: door,
            vertical_wall: true,
        }
    } else {
        Door {
            x: r.x + door_at,
            y: r.y + k,
            width: door,
            vertical_wall: false,
        }
    };
    Some(if vertical {
        (
            Rect {
                x: r.x,
                y: r.y,
                w: k,
                h: r.h,
            },
            Rect {
                x: r.x + k + 1,
                y: r.y,
                w: r.w - k - 1,
                h: r.h,
            },
            door,
        )
    } else {
        (
            Rect {
                x: r.x,
                y: r.y,
                w: r.w,
                h: k,
            },
            Rect {
                x: r.x,
                y: r.y + k + 1,
                w: r.w,
                h: r.h - k - 1,
            },
            door,
        )
    })
}

/// Labels free cells by connected component; returns (labels, component sizes).
/// `usize::MAX` marks non-free cells.
fn free_components(map: &GroundTruthMap, eight: bool) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (map.width(), map.height());
    let mut label = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if label[start] != usize::MAX || map.cells()[start] != CellClass::Free {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if label[j] == usize::MAX && map.cells()[j] == CellClass::Free {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

/// True when all free cells form one 4-connected region.
pub fn is_four_connected(map: &GroundTruthMap) -> bool {
    free_components(map, false).1.len() == 1
}

/// Number of 8-connected free regions.
pub fn free_component_count(map: &GroundTruthMap) -> usize {
    free_components(map, true).1.len()
}

/// Result of importing a raster map.
#[derive(Debug, Clone)]
pub struct RasterImport {
    pub map: GroundTruthMap,
    /// Free cells outside the largest 8-connected component, now exterior.
    pub reclassified: usize,
}

impl RasterImport {
    pub fn has_warning(&self) -> bool {
        self.reclassified > 0
    }
}

pub fn parse_ascii(text: &str) -> Result<RasterImport, FloorplanError> {
    let parse_err = |line: usize, column: usize, message: String| FloorplanError::Parse { line, column, message };
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let mut parts = header.split(' ');
    let mut dim = |name: &str, column: usize| -> Result<usize, FloorplanError> {
        let tok = parts
            .next()
            .ok_or_else(|| parse_err(1, column, format!("missing {name}")))?;
        tok.parse::<usize>()
            .map_err(|_| parse_err(1, column, format!("invalid {name} {tok:?}")))
    };
    let width = dim("width", 1)?;
    let height = dim("height", header.find(' ').map_or(1, |i| i + 2))?;
    if let Some(extra) = parts.next() {
        return Err(parse_err(
            1,
            header.len() - extra.len() + 1,
            "unexpected token after height".into(),
        ));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(1, 1, "dimensions must be positive".into()));
    }
    let mut cells = Vec::with_capacity(width * height);
    for row in 0..height {
        let line_no = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| parse_err(line_no, 1, format!("expected {height} rows, found {row}")))?;
        let mut n = 0;
        for (col, ch) in line.chars().enumerate() {
            let class = match ch {
                '#' => CellClass::Obstacle,
                '.' => CellClass::Free,
                '~' => CellClass::Exterior,
                other => return Err(parse_err(line_no, col + 1, format!("unexpected character {other:?}"))),
            };
            if col >= width {
                return Err(parse_err(line_no, col + 1, format!("row longer than width {width}")));
            }
            cells.push(class);
            n += 1;
        }
        if n != width {
            return Err(parse_err(
                line_no,
                n + 1,
                format!("row has {n} cells, expected {width}"),
            ));
        }
    }
    for (i, rest) in lines.enumerate() {
        if !rest.is_empty() {
            return Err(parse_err(height + 2 + i, 1, "trailing content after last row".into()));
        }
    }
    let map = GroundTruthMap::new(width, height, cells)?;
    if map.free_area() == 0 {
        return Err(FloorplanError::EmptyMap);
    }
    let (label, sizes) = free_components(&map, true);
    if sizes.len() == 1 {
        return Ok(RasterImport { map, reclassified: 0 });
    }
    // Keep the largest component; the earliest in row-major order wins ties.
    let keep = (0..sizes.len()).fold(0, |best, i| if sizes[i] > sizes[best] { i } else { best });
    let mut cells = map.cells().to_vec();
    let mut reclassified = 0;
    for (i, c) in cells.iter_mut().enumerate() {
        if *c == CellClass::Free && label[i] != keep {
            *c = CellClass::Exterior;
            reclassified += 1;
        }
    }
    log::warn!("reclassified {reclassified} unreachable free cell(s) as exterior");
    Ok(RasterImport {
        map: GroundTruthMap::new(width, height, cells)?,
        reclassified,
    })
}

pub fn import_raster(path: &Path) -> Result<RasterImport, FloorplanError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_ascii(&text)
}

pub fn to_ascii(map: &GroundTruthMap) -> String {
    let mut s = String::with_capacity((map.width() + 1) * (map.height() + 1));
    let _ = writeln!(s, "{} {}", map.width(), map.height());
    for y in 0..map.height() {
        for x in 0..map.width() {
            s.push(match map.get(x, y) {
                CellClass::Obstacle => '#',
                CellClass::Free => '.',
                CellClass::Exterior | CellClass::Unknown => '~',
            });
        }
        s.push('\n');
    }
    s
}

pub fn export_raster(map: &GroundTruthMap, path: &Path) -> Result<(), FloorplanError> {
    fs::write(path, to_ascii(map)).map_err(io_err(path))
}

/// Shape of the building outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContourClass {
    /// The interior fills its bounding box.
    Rectangle,
    Concave,
}

pub fn contour_class(map: &GroundTruthMap) -> ContourClass {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.is_interior(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return ContourClass::Concave;
    }
    let bbox = (x1 - x0 + 1) * (y1 - y0 + 1);
    if bbox == map.interior_area() {
        ContourClass::Rectangle
    } else {
        ContourClass::Concave
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// File stem of the map file.
    pub id: String,
    /// Path relative to the dataset root.
    pub path: PathBuf,
}

/// A dataset directory listing its map files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: &Path, paths: Vec<PathBuf>) -> Self {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        let entries = paths
            .into_iter()
            .map(|path| ManifestEntry {
                id: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                path,
            })
            .collect();
        Self {
            name,
            root: root.to_path_buf(),
            entries,
        }
    }

    pub fn load(root: &Path) -> Result<Self, FloorplanError> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Self::parse(root, &text)
    }

    pub fn parse(root: &Path, text: &str) -> Result<Self, FloorplanError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MANIFEST_HEADER => {}
            _ => {
                return Err(FloorplanError::Parse {
                    line: 1,
                    column: 1,
                    message: format!("expected header {MANIFEST_HEADER:?}"),
                })
            }
        }
        let paths = lines.filter(|l| !l.trim().is_empty()).map(PathBuf::from).collect();
        Ok(Self::new(root, paths))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            s.push_str(&e.path.to_string_lossy());
            s.push('\n');
        }
        s
    }

    pub fn write(&self) -> Result<(), FloorplanError> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(io_err(&path))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_map(&self, entry: &ManifestEntry) -> Result<GroundTruthMap, FloorplanError> {
        let path = self.root.join(&entry.path);
        import_raster(&path).map(|r| r.map).map_err(|e| FloorplanError::Member {
            path,
            source: Box::new(e),
        })
    }

    pub fn find(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Loads every member; fails listing all offenders.
    pub fn load_all(&self) -> Result<Vec<(String, GroundTruthMap)>, FloorplanError> {
        let mut maps = Vec::with_capacity(self.entries.len());
        let mut failures = Vec::new();
        for e in &self.entries {
            match self.load_map(e) {
                Ok(m) => maps.push((e.id.clone(), m)),
                Err(err) => failures.push((self.root.join(&e.path), err)),
            }
        }
        if failures.is_empty() {
            Ok(maps)
        } else {
            Err(FloorplanError::Aggregate(failures))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub maps: usize,
    pub area_mean: f64,
    pub area_std: f64,
    pub wall_fraction_mean: f64,
    pub wall_fraction_std: f64,
    pub rectangular_maps: usize,
}

impl DatasetStats {
    pub fn from_maps<'a>(maps: impl IntoIterator<Item = &'a GroundTruthMap>) -> Self {
        let mut areas = Vec::new();
        let mut walls = Vec::new();
        let mut rectangular_maps = 0;
        for m in maps {
            areas.push(m.interior_area() as f64);
            walls.push(m.wall_fraction());
            if contour_class(m) == ContourClass::Rectangle {
                rectangular_maps += 1;
            }
        }
        let (area_mean, area_std) = mean_std(&areas);
        let (wall_fraction_mean, wall_fraction_std) = mean_std(&walls);
        Self {
            maps: areas.len(),
            area_mean,
            area_std,
            wall_fraction_mean,
            wall_fraction_std,
            rectangular_maps,
        }
    }

    pub fn contour(&self) -> &'static str {
        if self.maps == 0 {
            "none"
        } else if self.rectangular_maps == self.maps {
            "convex (rectangle)"
        } else if self.rectangular_maps == 0 {
            "concave"
        } else {
            "mixed"
        }
    }
}

/// Population mean and standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn dataset_stats(manifest: &DatasetManifest) -> Result<DatasetStats, FloorplanError> {
    let maps = manifest.load_all()?;
    Ok(DatasetStats::from_maps(maps.iter().map(|(_, m)| m)))
}

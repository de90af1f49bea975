//! Binary PGM (P5) path images.

use gridscout_core::grid::{CellClass, ObservationGrid, Pose};

/// Gray levels of a path image. `PATH` is used by no cell class.
pub const FREE: u8 = 255;
pub const UNKNOWN: u8 = 100;
pub const BLOCKED: u8 = 0;
pub const PATH: u8 = 200;

/// Paints `map` and marks every cell of `path`.
pub fn path_image(map: &ObservationGrid, path: &[Pose]) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut pixels: Vec<u8> = map
        .cells()
        .iter()
        .map(|c| match c {
            CellClass::Free => FREE,
            CellClass::Unknown => UNKNOWN,
            CellClass::Obstacle | CellClass::Exterior => BLOCKED,
        })
        .collect();
    for p in path {
        pixels[p.y * w + p.x] = PATH;
    }
    encode(w, h, &pixels)
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match the raster");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 raster with a single-space/newline header.
pub fn decode(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos + 1..)?;
    (data.len() == w * h).then(|| (w, h, data.to_vec()))
}

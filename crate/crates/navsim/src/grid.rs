//! Occupancy grids, map files and ray casting.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::NavError;

/// Planar pose. The heading `yaw` points along `(cos yaw, sin yaw)` in the
/// `(x, z)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, z: f64, yaw: f64) -> Self {
        Pose2 { x, z, yaw }
    }

    pub fn distance(&self, o: &Pose2) -> f64 {
        (self.x - o.x).hypot(self.z - o.z)
    }
}

/// Row-major grid; row index grows with z, column index with x.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    /// Cells per metre.
    resolution: f64,
    /// World `(x, z)` of the outer corner of cell (0, 0).
    origin: [f64; 2],
    occupied: Vec<bool>,
}

/// Sidecar metadata stored next to a PGM map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMeta {
    pub resolution: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

impl OccupancyGrid {
    /// An all-free grid.
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self, NavError> {
        if width == 0 || height == 0 {
            return Err(NavError::InvalidArgument("grid must have at least one cell".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(NavError::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            origin: [0.0, 0.0],
            occupied: vec![false; width * height],
        })
    }

    /// Builds a grid from text rows: `#` is occupied, anything else free.
    /// The first row is row 0.
    pub fn from_rows(rows: &[&str], resolution: f64) -> Result<Self, NavError> {
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(NavError::InvalidArgument("rows must have equal length".into()));
        }
        let mut g = Self::new(width, rows.len(), resolution)?;
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                g.set(r, c, ch == '#');
            }
        }
        Ok(g)
    }

    pub fn with_origin(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.resolution
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupied[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, occupied: bool) {
        self.occupied[row * self.width + col] = occupied;
    }

    /// Marks the axis-aligned rectangle `[x0, x1) × [z0, z1)` (metres).
    pub fn fill_rect(&mut self, x0: f64, z0: f64, x1: f64, z1: f64, occupied: bool) {
        let c0 = ((x0 - self.origin[0]) * self.resolution).round().max(0.0) as usize;
        let c1 = (((x1 - self.origin[0]) * self.resolution).round().max(0.0) as usize).min(self.width);
        let r0 = ((z0 - self.origin[1]) * self.resolution).round().max(0.0) as usize;
        let r1 = (((z1 - self.origin[1]) * self.resolution).round().max(0.0) as usize).min(self.height);
        for r in r0..r1 {
            for c in c0..c1 {
                self.set(r, c, occupied);
            }
        }
    }

    /// Occupies the outermost ring of cells.
    pub fn add_border(&mut self) {
        for c in 0..self.width {
            self.set(0, c, true);
            self.set(self.height - 1, c, true);
        }
        for r in 0..self.height {
            self.set(r, 0, true);
            self.set(r, self.width - 1, true);
        }
    }

    pub fn cell_of(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) * self.resolution).floor();
        let r = ((z - self.origin[1]) * self.resolution).floor();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// World `(x, z)` of a cell centre.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin[0] + (col as f64 + 0.5) / self.resolution,
            self.origin[1] + (row as f64 + 0.5) / self.resolution,
        )
    }

    /// Inside the grid and on a free cell.
    pub fn is_free_point(&self, x: f64, z: f64) -> bool {
        self.cell_of(x, z).is_some_and(|(r, c)| !self.is_occupied(r, c))
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.is_occupied(r, c))
            .collect()
    }

    /// Binary PGM, occupied cells black (0), free cells white (254).
    pub fn to_pgm(&self) -> Vec<u8> {
        let pixels: Vec<u8> = self.occupied.iter().map(|o| if *o { 0 } else { 254 }).collect();
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&pixels, self.width as u32, self.height as u32, ExtendedColorType::L8)
            .expect("in-memory PGM encoding");
        out
    }

    /// Reads a PGM; pixels darker than 128 are occupied.
    pub fn from_pgm(bytes: &[u8], meta: &MapMeta) -> Result<Self, NavError> {
        let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)?.into_luma8();
        let mut g = Self::new(img.width() as usize, img.height() as usize, meta.resolution)?.with_origin(meta.origin);
        for (c, r, p) in img.enumerate_pixels() {
            g.set(r as usize, c as usize, p.0[0] < 128);
        }
        Ok(g)
    }

    pub fn meta(&self) -> MapMeta {
        MapMeta {
            resolution: self.resolution,
            origin: self.origin,
        }
    }

    /// Writes `path` (PGM) and its `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<(), NavError> {
        fs::write(path, self.to_pgm())?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NavError> {
        let meta: MapMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        Self::from_pgm(&fs::read(path)?, &meta)
    }
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Distance from `pose` to the first occupied cell along the beam at
/// `angle` (relative to the heading). Rays that leave the grid or run past
/// `max_range` return `max_range`.
pub fn raycast(grid: &OccupancyGrid, pose: &Pose2, angle: f64, max_range: f64) -> Result<f64, NavError> {
    let Some((mut row, mut col)) = grid.cell_of(pose.x, pose.z) else {
        return Err(NavError::InvalidPose { x: pose.x, z: pose.z });
    };
    if grid.is_occupied(row, col) {
        return Err(NavError::InvalidPose { x: pose.x, z: pose.z });
    }
    let (dz, dx) = (pose.yaw + angle).sin_cos();
    let px = (pose.x - grid.origin[0]) * grid.resolution;
    let pz = (pose.z - grid.origin[1]) * grid.resolution;
    let limit = max_range * grid.resolution;

    let axis = |p: f64, cell: usize, d: f64| -> (isize, f64, f64) {
        if d > 0.0 {
            (1, (cell as f64 + 1.0 - p) / d, 1.0 / d)
        } else if d < 0.0 {
            (-1, (p - cell as f64) / -d, -1.0 / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (step_c, mut next_c, delta_c) = axis(px, col, dx);
    let (step_r, mut next_r, delta_r) = axis(pz, row, dz);

    loop {
        let t = if next_c < next_r {
            let t = next_c;
            next_c += delta_c;
            let c = col as isize + step_c;
            if c < 0 || c >= grid.width as isize {
                return Ok(max_range);
            }
            col = c as usize;
            t
        } else {
            let t = next_r;
            next_r += delta_r;
            let r = row as isize + step_r;
            if r < 0 || r >= grid.height as isize {
                return Ok(max_range);
            }
            row = r as usize;
            t
        };
        if t > limit {
            return Ok(max_range);
        }
        if grid.is_occupied(row, col) {
            return Ok(t / grid.resolution);
        }
    }
}

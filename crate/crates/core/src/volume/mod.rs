//! Scalar 3D volumes with physical geometry.
//!
//! A [`Volume`] is a dense `f32` grid stored x-fastest, tagged with a [`Unit`]
//! and a [`Grid`] describing how voxel indices map to world millimetres:
//!
//! ```text
//! world = origin + direction · (spacing ⊙ index)
//! ```
//!
//! `origin` is the world position of the centre of voxel (0, 0, 0). Sampling
//! outside the voxel extent returns 0 (water).

mod grid_ops;
pub mod nifti;
pub mod raw;

use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid_ops::{pad_crop_geometry, pad_crop_to_grid, resample_trilinear, SIMULATION_GRID_DIMS};

/// A point in world coordinates, millimetres.
pub type WorldPoint = Point3<f64>;

/// Physical quantity held by a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Hu,
    Dimensionless,
    MPerS,
    KgPerM3,
    DbCmMhz,
    Pa,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Hu => "HU",
            Unit::Dimensionless => "dimensionless",
            Unit::MPerS => "m_per_s",
            Unit::KgPerM3 => "kg_per_m3",
            Unit::DbCmMhz => "dB_cm_MHz",
            Unit::Pa => "Pa",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        Some(match s {
            "HU" => Unit::Hu,
            "dimensionless" => Unit::Dimensionless,
            "m_per_s" => Unit::MPerS,
            "kg_per_m3" => Unit::KgPerM3,
            "dB_cm_MHz" => Unit::DbCmMhz,
            "Pa" => Unit::Pa,
            _ => return None,
        })
    }
}

/// Geometry of a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: WorldPoint,
    direction: Matrix3<f64>,
}

impl Grid {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: WorldPoint,
        direction: Matrix3<f64>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {spacing:?}"
            )));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        let det = direction.determinant();
        let gram = direction.transpose() * direction;
        if (det.abs() - 1.0).abs() > 1e-9 || (gram - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "direction matrix is not orthonormal (det = {det})"
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
            direction,
        })
    }

    /// Identity-direction grid.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: WorldPoint) -> Result<Self> {
        Self::new(dims, spacing, origin, Matrix3::identity())
    }

    /// Identity-direction grid whose centre sits on the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = WorldPoint::new(
            -0.5 * (dims[0] as f64 - 1.0) * spacing[0],
            -0.5 * (dims[1] as f64 - 1.0) * spacing[1],
            -0.5 * (dims[2] as f64 - 1.0) * spacing[2],
        );
        Self::axis_aligned(dims, spacing, origin)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> WorldPoint {
        self.origin
    }

    pub fn direction(&self) -> &Matrix3<f64> {
        &self.direction
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// World position of a (possibly fractional) index.
    pub fn index_to_world(&self, idx: [f64; 3]) -> WorldPoint {
        let scaled = Vector3::new(
            idx[0] * self.spacing[0],
            idx[1] * self.spacing[1],
            idx[2] * self.spacing[2],
        );
        self.origin + self.direction * scaled
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> WorldPoint {
        self.index_to_world([i as f64, j as f64, k as f64])
    }

    /// Continuous index of a world point.
    pub fn world_to_index(&self, p: &WorldPoint) -> [f64; 3] {
        let local = self.direction.transpose() * (p - self.origin);
        [
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        ]
    }

    /// Whether the continuous index lies within the voxel extent `[-0.5, n - 0.5]`.
    pub fn index_in_extent(&self, idx: [f64; 3]) -> bool {
        (0..3).all(|a| idx[a] >= -0.5 && idx[a] <= self.dims[a] as f64 - 0.5)
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        self.index_in_extent(self.world_to_index(p))
    }

    /// Nearest voxel to a world point, if the point is inside the voxel extent.
    pub fn nearest_voxel(&self, p: &WorldPoint) -> Option<[usize; 3]> {
        let idx = self.world_to_index(p);
        if !self.index_in_extent(idx) {
            return None;
        }
        let mut out = [0usize; 3];
        for a in 0..3 {
            out[a] = (idx[a].round().max(0.0) as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| (self.spacing[a] - other.spacing[a]).abs() <= 1e-9)
            && (self.origin - other.origin).norm() <= 1e-6
            && (self.direction - other.direction).abs().max() <= 1e-9
    }

    /// Physical extent along each axis (`dims · spacing`).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }
}

/// Dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
    unit: Unit,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>, unit: Unit) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid {:?} needs {} voxels, got {}",
                grid.dims,
                grid.len(),
                data.len()
            )));
        }
        Ok(Volume { grid, data, unit })
    }

    pub fn filled(grid: Grid, value: f32, unit: Unit) -> Self {
        let data = vec![value; grid.len()];
        Volume { grid, data, unit }
    }

    /// Build a volume by evaluating `f` at every voxel centre.
    pub fn from_world_fn(grid: Grid, unit: Unit, f: impl Fn(&WorldPoint) -> f32 + Sync) -> Self {
        use rayon::prelude::*;
        let [nx, ny, _] = grid.dims;
        let mut data = vec![0.0f32; grid.len()];
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
            for j in 0..ny {
                for i in 0..nx {
                    plane[i + nx * j] = f(&grid.voxel_center(i, j, k));
                }
            }
        });
        Volume { grid, data, unit }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.linear(i, j, k)]
    }

    /// Same geometry, new payload.
    pub fn with_data(&self, data: Vec<f32>, unit: Unit) -> Result<Self> {
        Volume::new(self.grid.clone(), data, unit)
    }

    pub fn map(&self, unit: Unit, f: impl Fn(f32) -> f32 + Sync + Send) -> Self {
        use rayon::prelude::*;
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Volume {
            grid: self.grid.clone(),
            data,
            unit,
        }
    }

    pub fn require_unit(&self, unit: Unit, what: &str) -> Result<()> {
        if self.unit != unit {
            return Err(Error::InvalidParameter(format!(
                "{what} must be in {}, got {}",
                unit.as_str(),
                self.unit.as_str()
            )));
        }
        Ok(())
    }

    pub fn require_same_grid(&self, other: &Volume, what: &str) -> Result<()> {
        if !self.grid.same_geometry(&other.grid) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: grids differ ({:?} vs {:?})",
                self.grid.dims, other.grid.dims
            )));
        }
        Ok(())
    }

    /// Trilinear sample at a continuous index. Outside the voxel extent the fill
    /// value 0 is returned; within the outer half-voxel the edge is clamped.
    #[inline]
    pub fn sample_index(&self, idx: [f64; 3]) -> f32 {
        if !self.grid.index_in_extent(idx) {
            return 0.0;
        }
        let d = self.grid.dims;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            let c = idx[a].clamp(0.0, (d[a] - 1) as f64);
            let f = c.floor();
            lo[a] = f as usize;
            hi[a] = (lo[a] + 1).min(d[a] - 1);
            t[a] = c - f;
        }
        let v = |i: usize, j: usize, k: usize| self.data[self.grid.linear(i, j, k)] as f64;
        let c00 = v(lo[0], lo[1], lo[2]) * (1.0 - t[0]) + v(hi[0], lo[1], lo[2]) * t[0];
        let c10 = v(lo[0], hi[1], lo[2]) * (1.0 - t[0]) + v(hi[0], hi[1], lo[2]) * t[0];
        let c01 = v(lo[0], lo[1], hi[2]) * (1.0 - t[0]) + v(hi[0], lo[1], hi[2]) * t[0];
        let c11 = v(lo[0], hi[1], hi[2]) * (1.0 - t[0]) + v(hi[0], hi[1], hi[2]) * t[0];
        let c0 = c00 * (1.0 - t[1]) + c10 * t[1];
        let c1 = c01 * (1.0 - t[1]) + c11 * t[1];
        (c0 * (1.0 - t[2]) + c1 * t[2]) as f32
    }

    pub fn sample(&self, p: &WorldPoint) -> f32 {
        self.sample_index(self.grid.world_to_index(p))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Extract a 2D plane perpendicular to `axis` (0 = x, 1 = y, 2 = z) at `index`.
    /// Returns `(width, height, values)` with the first remaining axis running fastest.
    pub fn slice(&self, axis: usize, index: usize) -> Result<(usize, usize, Vec<f32>)> {
        if axis > 2 {
            return Err(Error::InvalidParameter(format!("axis must be 0, 1 or 2, got {axis}")));
        }
        let d = self.grid.dims;
        if index >= d[axis] {
            return Err(Error::InvalidParameter(format!(
                "slice index {index} out of range for axis {axis} with {} planes",
                d[axis]
            )));
        }
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut out = Vec::with_capacity(d[u] * d[v]);
        for b in 0..d[v] {
            for a in 0..d[u] {
                let mut ijk = [0usize; 3];
                ijk[axis] = index;
                ijk[u] = a;
                ijk[v] = b;
                out.push(self.get(ijk[0], ijk[1], ijk[2]));
            }
        }
        Ok((d[u], d[v], out))
    }
}

/// Read a volume, dispatching on extension: `.nii` (NIfTI-1) or `.vol` (raw + sidecar header).
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "nii" => nifti::read_nifti(path),
        "vol" => raw::read_raw(path),
        other => Err(Error::format(
            path,
            format!("unsupported volume extension '{other}' (expected .nii or .vol)"),
        )),
    }
}

/// Write a volume, dispatching on extension. NIfTI output uses int16 when the
/// payload is integral HU within range, float32 otherwise.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "nii" => {
            let dtype = if nifti::fits_int16(vol) {
                nifti::NiftiDtype::Int16
            } else {
                nifti::NiftiDtype::Float32
            };
            nifti::write_nifti(vol, path, dtype)
        }
        "vol" => raw::write_raw(vol, path),
        other => Err(Error::format(
            path,
            format!("unsupported volume extension '{other}' (expected .nii or .vol)"),
        )),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

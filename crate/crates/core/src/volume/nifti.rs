//! Single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Little-endian only, int16 or float32 payloads, 3D (a trailing singleton
//! fourth dimension is accepted). The sform affine is used when
//! `sform_code > 0`, then the qform quaternion, then plain `pixdim` scaling.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{Grid, Unit, Volume, WorldPoint};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const UNITS_MM: u8 = 2;
const UNIT_TAG: &str = "unit=";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    Int16,
    Float32,
}

/// True when every voxel is an integer representable as int16.
pub fn fits_int16(vol: &Volume) -> bool {
    vol.data()
        .iter()
        .all(|&v| v.fract() == 0.0 && v >= i16::MIN as f32 && v <= i16::MAX as f32)
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes([self.0[off], self.0[off + 1]])
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.0[off..off + 4].try_into().unwrap())
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.0[off..off + 4].try_into().unwrap())
    }
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes).map_err(|reason| match reason {
        ParseError::Datatype(code) => Error::UnsupportedDatatype(code),
        ParseError::Dims(msg) => Error::DimensionMismatch(format!("{}: {msg}", path.display())),
        ParseError::Format(msg) => Error::format(path, msg),
    })
}

enum ParseError {
    Format(String),
    Datatype(i16),
    Dims(String),
}

fn parse_nifti(bytes: &[u8]) -> std::result::Result<Volume, ParseError> {
    if bytes.len() < HEADER_SIZE {
        return Err(ParseError::Format(format!(
            "file is {} bytes, shorter than a NIfTI-1 header",
            bytes.len()
        )));
    }
    let h = Reader(bytes);
    let sizeof_hdr = h.i32(0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(ParseError::Format("big-endian NIfTI is not supported".into()));
        }
        return Err(ParseError::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    if &bytes[344..348] != MAGIC {
        return Err(ParseError::Format("missing single-file magic \"n+1\"".into()));
    }

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(ParseError::Format(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        let v = h.i16(42 + 2 * a);
        if v < 1 {
            return Err(ParseError::Format(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    for a in 3..ndim as usize {
        if h.i16(42 + 2 * a) > 1 {
            return Err(ParseError::Format("only 3D volumes are supported".into()));
        }
    }

    let datatype = h.i16(70);
    let elem = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(ParseError::Datatype(other)),
    };

    let vox_offset = h.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(ParseError::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = dims[0] * dims[1] * dims[2];
    let payload = bytes.len().saturating_sub(start);
    if payload != n * elem {
        return Err(ParseError::Dims(format!(
            "header dims {}x{}x{} need {} voxels ({} bytes) but payload holds {} bytes ({} voxels)",
            dims[0],
            dims[1],
            dims[2],
            n,
            n * elem,
            payload,
            payload / elem
        )));
    }

    let slope = h.f32(112);
    let inter = h.f32(116);
    let scale = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let body = &bytes[start..];
    let mut data: Vec<f32> = match datatype {
        DT_INT16 => body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        _ => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if scale {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let (spacing, origin, direction) = geometry(&h)?;
    let grid = Grid::new(dims, spacing, origin, direction)
        .map_err(|e| ParseError::Format(format!("invalid geometry: {e}")))?;

    let descrip = &bytes[148..228];
    let descrip = String::from_utf8_lossy(&descrip[..descrip.iter().position(|&b| b == 0).unwrap_or(80)]);
    let unit = descrip
        .split_whitespace()
        .find_map(|t| t.strip_prefix(UNIT_TAG))
        .and_then(Unit::parse)
        .unwrap_or(Unit::Hu);

    Volume::new(grid, data, unit).map_err(|e| ParseError::Dims(e.to_string()))
}

fn geometry(h: &Reader) -> std::result::Result<([f64; 3], WorldPoint, Matrix3<f64>), ParseError> {
    let pixdim = |a: usize| h.f32(76 + 4 * a) as f64;
    let qform_code = h.i16(252);
    let sform_code = h.i16(254);

    if sform_code > 0 {
        let row = |off: usize| [h.f32(off) as f64, h.f32(off + 4) as f64, h.f32(off + 8) as f64, h.f32(off + 12) as f64];
        let rows = [row(280), row(296), row(312)];
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        let mut spacing = [0f64; 3];
        let mut direction = Matrix3::zeros();
        for c in 0..3 {
            let col = m.column(c);
            spacing[c] = col.norm();
            if spacing[c] == 0.0 {
                return Err(ParseError::Format("sform has a zero column".into()));
            }
            direction.set_column(c, &(col / spacing[c]));
        }
        // Float32 storage leaves the columns orthonormal only to ~1e-7.
        let direction = orthonormalize(direction);
        let origin = WorldPoint::new(rows[0][3], rows[1][3], rows[2][3]);
        return Ok((spacing, origin, direction));
    }

    let spacing = [pixdim(1).abs(), pixdim(2).abs(), pixdim(3).abs()];
    let spacing = spacing.map(|s| if s > 0.0 { s } else { 1.0 });
    if qform_code > 0 {
        let (b, c, d) = (h.f32(256) as f64, h.f32(260) as f64, h.f32(264) as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(a, b, c, d));
        let mut direction = *rot.to_rotation_matrix().matrix();
        if pixdim(0) < 0.0 {
            let flipped = -direction.column(2);
            direction.set_column(2, &flipped);
        }
        let origin = WorldPoint::new(h.f32(268) as f64, h.f32(272) as f64, h.f32(276) as f64);
        return Ok((spacing, origin, direction));
    }
    Ok((spacing, WorldPoint::origin(), Matrix3::identity()))
}

fn orthonormalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => m,
    }
}

pub fn write_nifti(vol: &Volume, path: &Path, dtype: NiftiDtype) -> Result<()> {
    if dtype == NiftiDtype::Int16 && !fits_int16(vol) {
        return Err(Error::InvalidParameter(
            "volume has non-integral or out-of-range values for int16".into(),
        ));
    }
    fs::write(path, encode(vol, dtype)).map_err(|e| Error::io(path, e))
}

fn encode(vol: &Volume, dtype: NiftiDtype) -> Vec<u8> {
    let grid = vol.grid();
    let dims = grid.dims();
    let spacing = grid.spacing();
    let (code, bitpix, elem) = match dtype {
        NiftiDtype::Int16 => (DT_INT16, 16i16, 2),
        NiftiDtype::Float32 => (DT_FLOAT32, 32i16, 4),
    };
    let mut out = vec![0u8; VOX_OFFSET + vol.data().len() * elem];
    let put_i16 = |out: &mut [u8], off: usize, v: i16| out[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |out: &mut [u8], off: usize, v: f32| out[off..off + 4].copy_from_slice(&v.to_le_bytes());

    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    out[38] = b'r';
    put_i16(&mut out, 40, 3);
    for (a, &d) in dims.iter().enumerate() {
        put_i16(&mut out, 42 + 2 * a, d as i16);
    }
    for a in 3..7 {
        put_i16(&mut out, 42 + 2 * a, 1);
    }
    put_i16(&mut out, 70, code);
    put_i16(&mut out, 72, bitpix);

    let dir = grid.direction();
    let qfac = if dir.determinant() < 0.0 { -1.0 } else { 1.0 };
    put_f32(&mut out, 76, qfac as f32);
    for (a, &s) in spacing.iter().enumerate() {
        put_f32(&mut out, 80 + 4 * a, s as f32);
    }
    put_f32(&mut out, 108, VOX_OFFSET as f32);
    put_f32(&mut out, 112, 1.0);
    out[123] = UNITS_MM;

    let descrip = format!("tfus {UNIT_TAG}{}", vol.unit().as_str());
    out[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());

    // qform: proper rotation, with qfac flipping the third axis when needed.
    let mut rot = *dir;
    if qfac < 0.0 {
        let flipped = -rot.column(2);
        rot.set_column(2, &flipped);
    }
    let q = UnitQuaternion::from_matrix(&rot);
    let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
    let origin = grid.origin();
    put_i16(&mut out, 252, 1);
    put_i16(&mut out, 254, 1);
    put_f32(&mut out, 256, q.i as f32);
    put_f32(&mut out, 260, q.j as f32);
    put_f32(&mut out, 264, q.k as f32);
    put_f32(&mut out, 268, origin.x as f32);
    put_f32(&mut out, 272, origin.y as f32);
    put_f32(&mut out, 276, origin.z as f32);

    let affine = dir * Matrix3::from_diagonal(&Vector3::from(spacing));
    for r in 0..3 {
        let base = 280 + 16 * r;
        for c in 0..3 {
            put_f32(&mut out, base + 4 * c, affine[(r, c)] as f32);
        }
        put_f32(&mut out, base + 12, origin[r] as f32);
    }
    out[344..348].copy_from_slice(MAGIC);

    let body = &mut out[VOX_OFFSET..];
    match dtype {
        NiftiDtype::Int16 => {
            for (chunk, &v) in body.chunks_exact_mut(2).zip(vol.data()) {
                chunk.copy_from_slice(&(v as i16).to_le_bytes());
            }
        }
        NiftiDtype::Float32 => {
            for (chunk, &v) in body.chunks_exact_mut(4).zip(vol.data()) {
                chunk.copy_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

//! Internal cache format: a UTF-8 `key=value` header (`name.vol`) beside a
//! flat little-endian float32 payload (`name.raw`), x fastest.
//!
//! ```text
//! format=tfus-raw-1
//! dims=64 64 48
//! spacing=0.5 0.5 0.5
//! origin=-15.75 -15.75 -11.75
//! direction=1 0 0 0 1 0 0 0 1
//! unit=HU
//! data=name.raw
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;

use super::{Grid, Unit, Volume, WorldPoint};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "tfus-raw-1";

pub fn write_raw(vol: &Volume, path: &Path) -> Result<()> {
    let data_path = path.with_extension("raw");
    let data_name = data_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::format(path, "payload file name is not UTF-8"))?;
    let g = vol.grid();
    let d = g.dims();
    let s = g.spacing();
    let o = g.origin();
    let m = g.direction();
    // `{:?}` on f64 prints the shortest representation that round-trips.
    let header = format!(
        "format={FORMAT_TAG}\ndims={} {} {}\nspacing={:?} {:?} {:?}\norigin={:?} {:?} {:?}\n\
         direction={:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}\nunit={}\ndata={data_name}\n",
        d[0],
        d[1],
        d[2],
        s[0],
        s[1],
        s[2],
        o.x,
        o.y,
        o.z,
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
        vol.unit().as_str(),
    );
    let mut payload = Vec::with_capacity(vol.data().len() * 4);
    for v in vol.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data_path, payload).map_err(|e| Error::io(&data_path, e))?;
    fs::write(path, header).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key=value", n + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(path, format!("missing key '{k}'")))
    };
    if get("format")? != FORMAT_TAG {
        return Err(Error::format(path, format!("expected format={FORMAT_TAG}")));
    }
    let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
        let vals: std::result::Result<Vec<f64>, _> = get(k)?.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == n => Ok(v),
            _ => Err(Error::format(path, format!("'{k}' needs {n} numbers"))),
        }
    };
    let dims: Vec<usize> = get("dims")?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "'dims' needs 3 integers"))?;
    if dims.len() != 3 {
        return Err(Error::format(path, "'dims' needs 3 integers"));
    }
    let spacing = floats("spacing", 3)?;
    let origin = floats("origin", 3)?;
    let dir = floats("direction", 9)?;
    let unit = Unit::parse(get("unit")?).ok_or_else(|| Error::format(path, "unknown unit"))?;
    let grid = Grid::new(
        [dims[0], dims[1], dims[2]],
        [spacing[0], spacing[1], spacing[2]],
        WorldPoint::new(origin[0], origin[1], origin[2]),
        Matrix3::from_row_slice(&dir),
    )?;

    let data_path = path.with_file_name(get("data")?);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != grid.len() * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{}: header dims {:?} need {} voxels but payload holds {} bytes",
            data_path.display(),
            grid.dims(),
            grid.len(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(grid, data, unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.vol");
        let rot = *nalgebra::Rotation3::from_euler_angles(0.2, 0.0, -0.4).matrix();
        let g = Grid::new([4, 4, 4], [0.1 + 0.2, 0.5, 0.7], WorldPoint::new(-3.3, 1.0 / 3.0, 0.0), rot).unwrap();
        let data = (0..64).map(|i| (i as f32).sin() * 1e3).collect();
        let v = Volume::new(g, data, Unit::Pa).unwrap();
        write_raw(&v, &path).unwrap();
        let back = read_raw(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn payload_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vol");
        let v = Volume::filled(Grid::centered([2, 2, 2], [1.0; 3]).unwrap(), 1.0, Unit::Dimensionless);
        write_raw(&v, &path).unwrap();
        fs::write(path.with_extension("raw"), vec![0u8; 28]).unwrap();
        assert!(matches!(read_raw(&path), Err(Error::DimensionMismatch(_))));
    }
}

use rayon::prelude::*;

use super::{Grid, Volume, WorldPoint};
use crate::error::{Error, Result};

/// Simulation grid used for the full-size head runs at 0.5 mm isotropic spacing.
pub const SIMULATION_GRID_DIMS: [usize; 3] = [625, 625, 405];

/// Resample onto a new spacing covering the same world extent.
///
/// Output voxel `i` sits at the centre of the `i`-th cell of width `new_spacing`
/// measured from the input's lower extent corner; values are trilinear
/// interpolations of the input (0 outside).
pub fn resample_trilinear(vol: &Volume, new_spacing: [f64; 3]) -> Result<Volume> {
    if new_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "resample spacing must be positive, got {new_spacing:?}"
        )));
    }
    let src = vol.grid();
    let sp = src.spacing();
    let extent = src.extent();
    let mut dims = [1usize; 3];
    for a in 0..3 {
        dims[a] = ((extent[a] / new_spacing[a]).round() as usize).max(1);
    }
    // Continuous source index of output voxel 0 and the per-voxel step.
    let mut start = [0f64; 3];
    let mut step = [0f64; 3];
    for a in 0..3 {
        start[a] = (-0.5 * sp[a] + 0.5 * new_spacing[a]) / sp[a];
        step[a] = new_spacing[a] / sp[a];
    }
    let origin = src.index_to_world(start);
    let grid = Grid::new(dims, new_spacing, origin, *src.direction())?;

    let [nx, ny, _] = dims;
    let mut data = vec![0f32; grid.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        for j in 0..ny {
            for i in 0..nx {
                let idx = [
                    start[0] + i as f64 * step[0],
                    start[1] + j as f64 * step[1],
                    start[2] + k as f64 * step[2],
                ];
                plane[i + nx * j] = vol.sample_index(idx);
            }
        }
    });
    Volume::new(grid, data, vol.unit())
}

/// Geometry of a pad/crop about `center`: the output grid and the integer
/// offset such that `input_index = output_index + offset`.
///
/// `center` is snapped to its nearest input voxel, which lands on output voxel
/// `target_dims / 2` (integer division).
pub fn pad_crop_geometry(
    grid: &Grid,
    target_dims: [usize; 3],
    center: &WorldPoint,
) -> Result<(Grid, [i64; 3])> {
    if target_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidParameter(format!(
            "target dims must be >= 1, got {target_dims:?}"
        )));
    }
    let c = grid.world_to_index(center);
    let mut offset = [0i64; 3];
    for a in 0..3 {
        offset[a] = c[a].round() as i64 - (target_dims[a] / 2) as i64;
    }
    let origin = grid.index_to_world([offset[0] as f64, offset[1] as f64, offset[2] as f64]);
    let out = Grid::new(target_dims, grid.spacing(), origin, *grid.direction())?;
    Ok((out, offset))
}

/// Pad (with 0 HU) or crop to `target_dims`, keeping `center` on the grid's centre voxel.
pub fn pad_crop_to_grid(vol: &Volume, target_dims: [usize; 3], center: &WorldPoint) -> Result<Volume> {
    let (grid, offset) = pad_crop_geometry(vol.grid(), target_dims, center)?;
    let src = vol.dims();
    let [nx, ny, _] = target_dims;
    let mut data = vec![0f32; grid.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        let sk = k as i64 + offset[2];
        if sk < 0 || sk >= src[2] as i64 {
            return;
        }
        for j in 0..ny {
            let sj = j as i64 + offset[1];
            if sj < 0 || sj >= src[1] as i64 {
                continue;
            }
            let i_lo = (-offset[0]).clamp(0, nx as i64) as usize;
            let i_hi = (src[0] as i64 - offset[0]).clamp(0, nx as i64) as usize;
            if i_lo >= i_hi {
                continue;
            }
            let s0 = vol
                .grid()
                .linear((i_lo as i64 + offset[0]) as usize, sj as usize, sk as usize);
            plane[nx * j + i_lo..nx * j + i_hi].copy_from_slice(&vol.data()[s0..s0 + (i_hi - i_lo)]);
        }
    });
    Volume::new(grid, data, vol.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Unit;
    use proptest::prelude::*;

    fn ramp_x(n: usize) -> Volume {
        let g = Grid::axis_aligned([n, 1, 1], [1.0; 3], WorldPoint::origin()).unwrap();
        let data = (0..n).map(|i| 10.0 * i as f32).collect();
        Volume::new(g, data, Unit::Hu).unwrap()
    }

    #[test]
    fn identity_spacing_preserves_values() {
        let g = Grid::centered([5, 4, 3], [0.5, 0.7, 1.1]).unwrap();
        let data: Vec<f32> = (0..60).map(|i| (i * 37 % 11) as f32 * 13.5).collect();
        let v = Volume::new(g, data, Unit::Hu).unwrap();
        let r = resample_trilinear(&v, [0.5, 0.7, 1.1]).unwrap();
        assert_eq!(r.dims(), v.dims());
        assert!((r.grid().origin() - v.grid().origin()).norm() < 1e-12);
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn half_spacing_ramp_is_exact_in_interior() {
        let v = ramp_x(8);
        let r = resample_trilinear(&v, [0.5, 1.0, 1.0]).unwrap();
        assert_eq!(r.dims(), [16, 1, 1]);
        for i in 1..15 {
            let x = r.grid().voxel_center(i, 0, 0).x;
            assert!((r.get(i, 0, 0) as f64 - 10.0 * x).abs() < 1e-4, "i={i}");
        }
        // the midpoint between source voxels 2 and 3 is their mean
        assert!((v.sample(&WorldPoint::new(2.5, 0.0, 0.0)) - 25.0).abs() < 1e-6);
    }

    #[test]
    fn constant_stays_constant() {
        let g = Grid::centered([6, 5, 4], [0.8, 0.8, 1.3]).unwrap();
        let v = Volume::filled(g, 100.0, Unit::Hu);
        for sp in [[0.3, 0.3, 0.3], [1.7, 0.9, 2.0], [0.8, 0.8, 1.3]] {
            let r = resample_trilinear(&v, sp).unwrap();
            assert!(r.data().iter().all(|&x| (x - 100.0).abs() < 1e-4), "{sp:?}");
        }
    }

    #[test]
    fn rejects_nonpositive_spacing() {
        let v = ramp_x(4);
        assert!(resample_trilinear(&v, [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_pad_and_crop() {
        let g = Grid::centered([3, 3, 3], [1.0; 3]).unwrap();
        let data: Vec<f32> = (1..=27).map(|x| x as f32).collect();
        let v = Volume::new(g, data, Unit::Hu).unwrap();
        let c = WorldPoint::origin();
        let padded = pad_crop_to_grid(&v, [5, 5, 5], &c).unwrap();
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    let inner = (1..4).contains(&i) && (1..4).contains(&j) && (1..4).contains(&k);
                    let expect = if inner { v.get(i - 1, j - 1, k - 1) } else { 0.0 };
                    assert_eq!(padded.get(i, j, k), expect);
                }
            }
        }
        assert!((padded.grid().voxel_center(2, 2, 2) - c).norm() < 1e-12);

        let cropped = pad_crop_to_grid(&padded, [3, 3, 3], &c).unwrap();
        assert_eq!(cropped.data(), v.data());
        assert!((cropped.grid().origin() - v.grid().origin()).norm() < 1e-9);
    }

    #[test]
    fn full_size_grid_geometry() {
        let g = Grid::centered([180, 220, 160], [0.5; 3]).unwrap();
        let target = WorldPoint::new(-12.0, 4.5, 10.0);
        let (out, _) = pad_crop_geometry(&g, SIMULATION_GRID_DIMS, &target).unwrap();
        assert_eq!(out.dims(), [625, 625, 405]);
        assert_eq!(out.spacing(), [0.5; 3]);
        let snapped = g.nearest_voxel(&target).unwrap();
        let snapped = g.voxel_center(snapped[0], snapped[1], snapped[2]);
        assert!((out.voxel_center(312, 312, 202) - snapped).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn affine_fields_reproduced_in_interior(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -100.0f64..100.0,
            sx in 0.3f64..1.5, sy in 0.3f64..1.5, sz in 0.3f64..1.5,
        ) {
            let g = Grid::centered([9, 8, 7], [0.9, 1.0, 1.2]).unwrap();
            let v = Volume::from_world_fn(g, Unit::Hu, |p| (a * p.x + b * p.y + c * p.z + d) as f32);
            let r = resample_trilinear(&v, [sx, sy, sz]).unwrap();
            let [nx, ny, nz] = r.dims();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = r.grid().voxel_center(i, j, k);
                        let ci = v.grid().world_to_index(&p);
                        let interior = (0..3).all(|ax| ci[ax] >= 0.0 && ci[ax] <= (v.dims()[ax] - 1) as f64);
                        if interior {
                            let expect = a * p.x + b * p.y + c * p.z + d;
                            // f32 payload: relative 1e-6 of the field's magnitude
                            prop_assert!((r.get(i, j, k) as f64 - expect).abs() <= 1e-6 * 200.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn pad_then_crop_is_lossless(px in 0usize..4, py in 0usize..4, pz in 0usize..4, seed in 0u32..1000) {
            let g = Grid::centered([4, 5, 3], [0.5; 3]).unwrap();
            let data: Vec<f32> = (0..60u32).map(|i| ((i * 7919 + seed) % 2001) as f32 - 1000.0).collect();
            let v = Volume::new(g, data, Unit::Hu).unwrap();
            let c = v.grid().voxel_center(2, 2, 1);
            let padded = pad_crop_to_grid(&v, [4 + 2 * px, 5 + 2 * py, 3 + 2 * pz], &c).unwrap();
            let back = pad_crop_to_grid(&padded, [4, 5, 3], &c).unwrap();
            prop_assert_eq!(back.data(), v.data());
        }
    }
}

//! Skull extraction: global threshold, largest 26-connected component,
//! ball dilation, and masking of the CT.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Grid, Unit, Volume, WorldPoint};

/// Global bone threshold.
pub const DEFAULT_THRESHOLD_HU: f64 = 400.0;
pub const DEFAULT_DILATION_MM: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SkullMask {
    /// Binary (0/1) dimensionless volume on the CT grid.
    pub mask: Volume,
    pub threshold_hu: f64,
    pub dilation_radius_mm: f64,
}

impl SkullMask {
    pub fn voxel_count(&self) -> usize {
        self.mask.count_nonzero()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask.data()[idx] != 0.0
    }
}

pub fn extract_skull_mask(ct: &Volume, threshold: f64, dilation_radius_mm: f64) -> Result<SkullMask> {
    ct.require_unit(Unit::Hu, "skull extraction input")?;
    if !threshold.is_finite() {
        return Err(Error::InvalidParameter("threshold must be finite".into()));
    }
    if !(dilation_radius_mm >= 0.0 && dilation_radius_mm.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dilation radius must be >= 0, got {dilation_radius_mm}"
        )));
    }
    let above: Vec<bool> = ct.data().iter().map(|&v| v as f64 >= threshold).collect();
    if !above.iter().any(|&b| b) {
        return Err(Error::EmptySkull { threshold });
    }
    let largest = largest_component(&above, ct.dims());
    let dilated = dilate(&largest, ct.grid(), dilation_radius_mm);
    let data = dilated.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(SkullMask {
        mask: ct.with_data(data, Unit::Dimensionless)?,
        threshold_hu: threshold,
        dilation_radius_mm,
    })
}

/// Largest 26-connected component of a binary grid. Ties go to the component
/// holding the lowest linear index, so the result does not depend on traversal order.
pub fn largest_component(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let labels = label_components(mask, dims);
    let n_labels = labels.iter().copied().max().unwrap_or(0) as usize;
    if n_labels == 0 {
        return vec![false; mask.len()];
    }
    let mut sizes = vec![0usize; n_labels + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    // Labels are assigned in scan order, so the first maximum has the lowest seed index.
    let mut best = 1;
    for l in 2..=n_labels {
        if sizes[l] > sizes[best] {
            best = l;
        }
    }
    labels.iter().map(|&l| l as usize == best).collect()
}

/// 26-connected labelling by breadth-first flood fill. Label 0 is background;
/// components are numbered from 1 in order of their lowest linear index.
pub fn label_components(mask: &[bool], dims: [usize; 3]) -> Vec<u32> {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(idx) = queue.pop_front() {
            let i = idx % nx;
            let j = (idx / nx) % ny;
            let k = idx / (nx * ny);
            for dk in -1i64..=1 {
                let kk = k as i64 + dk;
                if kk < 0 || kk >= nz as i64 {
                    continue;
                }
                for dj in -1i64..=1 {
                    let jj = j as i64 + dj;
                    if jj < 0 || jj >= ny as i64 {
                        continue;
                    }
                    for di in -1i64..=1 {
                        let ii = i as i64 + di;
                        if ii < 0 || ii >= nx as i64 {
                            continue;
                        }
                        let n = ii as usize + nx * (jj as usize + ny * kk as usize);
                        if mask[n] && labels[n] == 0 {
                            labels[n] = next;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
    }
    labels
}

/// Integer offsets of the ball `|offset ⊙ spacing| <= radius`.
pub fn ball_offsets(spacing: [f64; 3], radius_mm: f64) -> Vec<[i64; 3]> {
    let r = [0, 1, 2].map(|a| (radius_mm / spacing[a] + 1e-9).floor() as i64);
    let r2 = radius_mm * radius_mm * (1.0 + 1e-9);
    let mut out = Vec::new();
    for dk in -r[2]..=r[2] {
        for dj in -r[1]..=r[1] {
            for di in -r[0]..=r[0] {
                let d2 = (di as f64 * spacing[0]).powi(2)
                    + (dj as f64 * spacing[1]).powi(2)
                    + (dk as f64 * spacing[2]).powi(2);
                if d2 <= r2 {
                    out.push([di, dj, dk]);
                }
            }
        }
    }
    out
}

/// Binary dilation by a rasterised ball of `radius_mm`.
pub fn dilate(mask: &[bool], grid: &Grid, radius_mm: f64) -> Vec<bool> {
    let offsets = ball_offsets(grid.spacing(), radius_mm);
    if offsets.len() <= 1 {
        return mask.to_vec();
    }
    let [nx, ny, nz] = grid.dims();
    let mut out = vec![false; mask.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                if mask[idx] {
                    plane[i + nx * j] = true;
                    continue;
                }
                plane[i + nx * j] = offsets.iter().any(|o| {
                    let (ii, jj, kk) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
                    ii >= 0
                        && jj >= 0
                        && kk >= 0
                        && ii < nx as i64
                        && jj < ny as i64
                        && kk < nz as i64
                        && mask[ii as usize + nx * (jj as usize + ny * kk as usize)]
                });
            }
        }
    });
    out
}

/// `ct` where the mask is set, 0 HU elsewhere.
pub fn apply_mask(ct: &Volume, mask: &SkullMask) -> Result<Volume> {
    ct.require_same_grid(&mask.mask, "apply_mask")?;
    let data = ct
        .data()
        .par_iter()
        .zip(mask.mask.data().par_iter())
        .map(|(&v, &m)| if m != 0.0 { v } else { 0.0 })
        .collect();
    ct.with_data(data, ct.unit())
}

/// Voxels reachable from `seed` through 6-connected non-skull voxels: the
/// cranial cavity when the skull is closed.
pub fn intracranial_mask(skull: &SkullMask, seed: &WorldPoint) -> Result<Volume> {
    let grid = skull.mask.grid();
    let start = grid
        .nearest_voxel(seed)
        .ok_or_else(|| Error::outside("intracranial seed", seed))?;
    let start = grid.linear(start[0], start[1], start[2]);
    if skull.contains(start) {
        return Err(Error::InvalidParameter(
            "intracranial seed lies inside the skull mask".into(),
        ));
    }
    let [nx, ny, nz] = grid.dims();
    let mut inside = vec![false; grid.len()];
    let mut queue = VecDeque::from([start]);
    inside[start] = true;
    while let Some(idx) = queue.pop_front() {
        let [i, j, k] = grid.coords(idx);
        let mut visit = |n: usize| {
            if !inside[n] && !skull.contains(n) {
                inside[n] = true;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(idx - 1);
        }
        if i + 1 < nx {
            visit(idx + 1);
        }
        if j > 0 {
            visit(idx - nx);
        }
        if j + 1 < ny {
            visit(idx + nx);
        }
        if k > 0 {
            visit(idx - nx * ny);
        }
        if k + 1 < nz {
            visit(idx + nx * ny);
        }
    }
    let data = inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    skull.mask.with_data(data, Unit::Dimensionless)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::centered([n, n, n], [1.0; 3]).unwrap()
    }

    fn ct_with(n: usize, voxels: &[[usize; 3]], hu: f32) -> Volume {
        let g = grid(n);
        let mut v = Volume::filled(g, 0.0, Unit::Hu);
        for &[i, j, k] in voxels {
            let idx = v.grid().linear(i, j, k);
            v.data_mut()[idx] = hu;
        }
        v
    }

    #[test]
    fn keeps_the_larger_blob() {
        let big: Vec<[usize; 3]> = (0..10).map(|i| [i, 1, 1]).collect();
        let small: Vec<[usize; 3]> = (0..5).map(|i| [i + 2, 8, 8]).collect();
        let all: Vec<_> = big.iter().chain(&small).copied().collect();
        let ct = ct_with(12, &all, 1200.0);
        let m = extract_skull_mask(&ct, 400.0, 0.0).unwrap();
        assert_eq!(m.voxel_count(), 10);
        for &[i, j, k] in &big {
            assert!(m.contains(ct.grid().linear(i, j, k)));
        }
    }

    #[test]
    fn diagonal_neighbours_connect() {
        // Corner-touching voxels are one component under 26-connectivity.
        let ct = ct_with(6, &[[1, 1, 1], [2, 2, 2], [3, 3, 3], [5, 0, 0]], 800.0);
        let m = extract_skull_mask(&ct, 400.0, 0.0).unwrap();
        assert_eq!(m.voxel_count(), 3);
    }

    #[test]
    fn unit_dilation_of_point() {
        let ct = ct_with(5, &[[2, 2, 2]], 1000.0);
        let m = extract_skull_mask(&ct, 400.0, 1.0).unwrap();
        assert_eq!(m.voxel_count(), 7);
    }

    #[test]
    fn water_has_no_skull() {
        let ct = Volume::filled(grid(4), 0.0, Unit::Hu);
        assert!(matches!(
            extract_skull_mask(&ct, 400.0, 2.0),
            Err(Error::EmptySkull { .. })
        ));
    }

    #[test]
    fn wrong_unit_rejected() {
        let v = Volume::filled(grid(3), 500.0, Unit::Pa);
        assert!(extract_skull_mask(&v, 400.0, 0.0).is_err());
    }

    #[test]
    fn mask_application() {
        let ct = Volume::filled(grid(4), 1000.0, Unit::Hu);
        let ones = SkullMask {
            mask: ct.map(Unit::Dimensionless, |_| 1.0),
            threshold_hu: 400.0,
            dilation_radius_mm: 0.0,
        };
        assert_eq!(apply_mask(&ct, &ones).unwrap(), ct);

        let zeros = SkullMask {
            mask: ct.map(Unit::Dimensionless, |_| 0.0),
            ..ones.clone()
        };
        assert!(apply_mask(&ct, &zeros).unwrap().data().iter().all(|&v| v == 0.0));

        let checker: Vec<f32> = (0..64)
            .map(|idx| {
                let [i, j, k] = ct.grid().coords(idx);
                ((i + j + k) % 2) as f32
            })
            .collect();
        let cm = SkullMask {
            mask: ct.with_data(checker.clone(), Unit::Dimensionless).unwrap(),
            ..ones
        };
        let out = apply_mask(&ct, &cm).unwrap();
        for (o, c) in out.data().iter().zip(&checker) {
            assert_eq!(*o, if *c == 1.0 { 1000.0 } else { 0.0 });
        }
    }

    #[test]
    fn apply_mask_dims_checked() {
        let ct = Volume::filled(grid(4), 1000.0, Unit::Hu);
        let m = SkullMask {
            mask: Volume::filled(grid(3), 1.0, Unit::Dimensionless),
            threshold_hu: 400.0,
            dilation_radius_mm: 0.0,
        };
        assert!(matches!(apply_mask(&ct, &m), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn cavity_flood_stays_inside_closed_shell() {
        let g = grid(11);
        let ct = Volume::from_world_fn(g, Unit::Hu, |p| {
            let r = p.coords.norm();
            if (3.0..=4.5).contains(&r) { 1500.0 } else { 0.0 }
        });
        let skull = extract_skull_mask(&ct, 400.0, 0.0).unwrap();
        let cavity = intracranial_mask(&skull, &WorldPoint::origin()).unwrap();
        for idx in 0..cavity.data().len() {
            if cavity.data()[idx] != 0.0 {
                let [i, j, k] = g_coords(&ct, idx);
                assert!(ct.grid().voxel_center(i, j, k).coords.norm() < 3.0);
            }
        }
        assert!(cavity.count_nonzero() > 50);
    }

    fn g_coords(v: &Volume, idx: usize) -> [usize; 3] {
        v.grid().coords(idx)
    }

    fn random_mask() -> impl Strategy<Value = Vec<bool>> {
        proptest::collection::vec(proptest::bool::weighted(0.3), 6 * 6 * 6)
    }

    proptest! {
        #[test]
        fn largest_component_independent_of_scan_order(mask in random_mask()) {
            let dims = [6, 6, 6];
            let a = largest_component(&mask, dims);
            // Relabel through a mirrored scan and mirror back.
            let mirror = |m: &[bool]| -> Vec<bool> { m.iter().rev().copied().collect() };
            let b = mirror(&largest_component(&mirror(&mask), dims));
            let size_a = a.iter().filter(|&&x| x).count();
            let size_b = b.iter().filter(|&&x| x).count();
            prop_assert_eq!(size_a, size_b);
            // Identical sets unless two components tie for largest.
            let labels = label_components(&mask, dims);
            let mut sizes = std::collections::HashMap::new();
            for &l in labels.iter().filter(|&&l| l > 0) { *sizes.entry(l).or_insert(0usize) += 1; }
            let ties = sizes.values().filter(|&&s| s == size_a).count();
            if ties == 1 {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn dilation_is_extensive_and_monotone(mask in random_mask(), r in 0.0f64..2.0, extra in 0.0f64..1.5) {
            let g = Grid::centered([6, 6, 6], [1.0, 0.8, 1.2]).unwrap();
            let small = dilate(&mask, &g, r);
            let large = dilate(&mask, &g, r + extra);
            for i in 0..mask.len() {
                prop_assert!(!mask[i] || small[i]);
                prop_assert!(!small[i] || large[i]);
            }
        }

        #[test]
        fn apply_mask_idempotent(mask in random_mask(), vals in proptest::collection::vec(-1000f32..3000.0, 216)) {
            let g = Grid::centered([6, 6, 6], [1.0; 3]).unwrap();
            let ct = Volume::new(g, vals, Unit::Hu).unwrap();
            let m = SkullMask {
                mask: ct.with_data(mask.iter().map(|&b| b as u8 as f32).collect(), Unit::Dimensionless).unwrap(),
                threshold_hu: 400.0,
                dilation_radius_mm: 0.0,
            };
            let once = apply_mask(&ct, &m).unwrap();
            let twice = apply_mask(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}

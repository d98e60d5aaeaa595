use rayon::prelude::*;

use crate::volume::Volume;

/// Normalised 1D Gaussian taps truncated at 3σ (σ in voxels).
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma_vox).ceil() as i64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian blur with an isotropic physical σ (mm). Samples outside
/// the grid count as 0, so mass leaks only when the support touches the border.
pub fn gaussian_blur(vol: &Volume, sigma_mm: f64) -> Volume {
    if sigma_mm <= 0.0 {
        return vol.clone();
    }
    let dims = vol.dims();
    let spacing = vol.spacing();
    let mut cur: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        let taps = gaussian_kernel(sigma_mm / spacing[axis]);
        if taps.len() > 1 {
            cur = convolve_axis(&cur, dims, axis, &taps);
        }
    }
    let data = cur.into_iter().map(|v| v as f32).collect();
    vol.with_data(data, vol.unit()).expect("same grid")
}

fn convolve_axis(src: &[f64], dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let half = (taps.len() / 2) as i64;
    let stride = [1, nx, nx * ny][axis];
    let n = dims[axis] as i64;
    let mut out = vec![0f64; src.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        for j in 0..ny {
            for i in 0..nx {
                let pos = [i, j, k][axis] as i64;
                let base = i + nx * (j + ny * k) - pos as usize * stride;
                let lo = (pos - half).max(0);
                let hi = (pos + half).min(n - 1);
                let mut acc = 0.0;
                for q in lo..=hi {
                    acc += taps[(q - pos + half) as usize] * src[base + q as usize * stride];
                }
                plane[i + nx * j] = acc;
            }
        }
    });
    debug_assert_eq!(nz * nx * ny, src.len());
    out
}

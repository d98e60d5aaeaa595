#![allow(dead_code)]

use tfus_core::acoustic::AcousticMedium;
use tfus_core::wavesim::{Solver, ToneBurst};
use tfus_core::{Grid, Unit, Volume};

pub const WATER_C: f64 = 1480.0;
pub const WATER_RHO: f64 = 1000.0;

/// Homogeneous lossless water on a centred cube.
pub fn water_cube(n: usize, dx: f64, f0: f64) -> AcousticMedium {
    water_box([n; 3], dx, f0)
}

pub fn water_box(dims: [usize; 3], dx: f64, f0: f64) -> AcousticMedium {
    let g = Grid::centered(dims, [dx; 3]).unwrap();
    let like = Volume::filled(g, 0.0, Unit::Hu);
    AcousticMedium::homogeneous(&like, WATER_C, WATER_RHO, 0.0, 1.1, f0)
}

/// A 4×4 cross-section line for plane-wave runs with periodic lateral axes.
/// `layer` fills cells `[a, b)` along x with the given properties.
pub fn water_line(nx: usize, dx: f64, f0: f64, layer: Option<(usize, usize, f32, f32, f32)>) -> AcousticMedium {
    let mut m = water_box([nx, 4, 4], dx, f0);
    if let Some((a, b, c, rho, alpha0)) = layer {
        let g = m.sound_speed.grid().clone();
        for k in 0..4 {
            for j in 0..4 {
                for i in a..b {
                    let n = g.linear(i, j, k);
                    m.sound_speed.data_mut()[n] = c;
                    m.density.data_mut()[n] = rho;
                    m.alpha0.data_mut()[n] = alpha0;
                }
            }
        }
    }
    m
}

/// Drive a unit plane source at `src` and record pressure at each probe cell along x.
pub fn plane_wave_traces(
    m: &AcousticMedium,
    src: usize,
    probes: &[usize],
    burst: ToneBurst,
    layer_voxels: usize,
    steps: Option<usize>,
) -> (Vec<Vec<f32>>, f64) {
    let mut s = Solver::new(m, 0.3, layer_voxels, [false, true, true]).unwrap();
    s.add_plane_source(0, src, 1.0);
    let steps = steps.unwrap_or((burst.duration() / s.dt()).ceil() as usize);
    let mut traces = vec![Vec::with_capacity(steps); probes.len()];
    for n in 0..steps {
        s.step(burst.value((n as f64 + 0.5) * s.dt()));
        for (t, &p) in traces.iter_mut().zip(probes) {
            t.push(s.pressure_at([p, 1, 1]));
        }
    }
    (traces, s.dt())
}

/// RMS over the last `window` samples.
pub fn tail_rms(trace: &[f32], window: usize) -> f64 {
    let tail = &trace[trace.len() - window..];
    (tail.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / window as f64).sqrt()
}

pub fn max_abs(trace: &[f32]) -> f64 {
    trace.iter().fold(0.0, |m: f64, &v| m.max((v as f64).abs()))
}

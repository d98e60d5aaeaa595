//! Staggered-grid linear acoustics, 2nd order in time and 4th order in space.
//!
//! ```text
//! ρ ∂u/∂t = −∇p
//! ∂p/∂t  = −ρc² ∇·u + ρc² q(t) δ(x − x_s)
//! ```
//!
//! Pressure lives on voxel centres, `u_a` half a voxel up along axis `a`.
//! Pressure is split per axis (`p = p_x + p_y + p_z`) so each component can
//! be damped by the absorbing layer of its own axis; the layer profile grows
//! cubically with depth. Medium absorption is a per-voxel exponential damping
//! of pressure tuned to the amplitude attenuation at the drive frequency.
//!
//! Arrays carry a two-cell halo on every side. Halo cells stay zero on
//! absorbing axes and mirror the opposite edge on periodic axes.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::acoustic::AcousticMedium;
use crate::error::{Error, Result};
use crate::volume::Grid;

const HALO: usize = 2;
const C1: f32 = 9.0 / 8.0;
const C2: f32 = 1.0 / 24.0;

/// Strength of the layer profile, nepers per voxel at the outer edge.
const LAYER_ALPHA: f64 = 2.0;
/// Reference distance for point-source amplitudes.
pub const SOURCE_REFERENCE_MM: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
struct Source {
    node: usize,
    weight: f32,
}

/// Finite tone burst: raised-cosine ramp, then a steady sinusoid, zero after `n_cycles`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneBurst {
    pub f0: f64,
    pub n_cycles: f64,
    pub ramp_cycles: f64,
}

impl ToneBurst {
    pub fn duration(&self) -> f64 {
        self.n_cycles / self.f0
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() {
            return 0.0;
        }
        let ramp_t = self.ramp_cycles / self.f0;
        let envelope = if ramp_t > 0.0 && t < ramp_t {
            0.5 * (1.0 - (PI * t / ramp_t).cos())
        } else {
            1.0
        };
        envelope * (2.0 * PI * self.f0 * t).sin()
    }
}

pub struct Solver {
    dims: [usize; 3],
    pdims: [usize; 3],
    spacing_m: [f64; 3],
    dt: f64,
    step: usize,
    periodic: [bool; 3],
    kappa: Vec<f32>,
    inv_rho: [Vec<f32>; 3],
    absorb: Vec<f32>,
    /// Layer factors exp(−σΔt/2) at integer and half-integer nodes, per axis.
    layer: [Vec<f32>; 3],
    layer_half: [Vec<f32>; 3],
    p: Vec<f32>,
    ps: [Vec<f32>; 3],
    u: [Vec<f32>; 3],
    sources: Vec<Source>,
    grid: Grid,
}

impl Solver {
    /// `cfl` scales the time step `Δt = cfl · min(Δx) / max(c)`.
    pub fn new(medium: &AcousticMedium, cfl: f64, layer_voxels: usize, periodic: [bool; 3]) -> Result<Self> {
        let grid = medium.sound_speed.grid().clone();
        medium.sound_speed.require_same_grid(&medium.density, "medium density")?;
        medium.sound_speed.require_same_grid(&medium.alpha0, "medium absorption")?;
        if !(cfl > 0.0 && cfl <= 0.5) {
            return Err(Error::Unstable(format!("cfl must lie in (0, 0.5], got {cfl}")));
        }
        let dims = grid.dims();
        for a in 0..3 {
            if periodic[a] && dims[a] < 4 {
                return Err(Error::InvalidParameter(format!(
                    "periodic axis {a} needs at least 4 cells, got {}",
                    dims[a]
                )));
            }
            if !periodic[a] && dims[a] <= 2 * layer_voxels {
                return Err(Error::InvalidParameter(format!(
                    "axis {a} has {} cells, too few for two {layer_voxels}-cell absorbing layers",
                    dims[a]
                )));
            }
        }
        let spacing_m = grid.spacing().map(|s| s * 1e-3);
        let c_max = medium.max_sound_speed();
        let c_min = medium.min_sound_speed();
        if !(c_min > 0.0) {
            return Err(Error::InvalidParameter("sound speed must be positive".into()));
        }
        let dx_min = spacing_m.iter().copied().fold(f64::INFINITY, f64::min);
        let dt = cfl * dx_min / c_max;

        let pdims = dims.map(|d| d + 2 * HALO);
        let plen = pdims[0] * pdims[1] * pdims[2];
        let pad = |v: &[f32]| -> Vec<f32> {
            let mut out = vec![0f32; plen];
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    let src = dims[0] * (j + dims[1] * k);
                    let dst = HALO + pdims[0] * (j + HALO + pdims[1] * (k + HALO));
                    out[dst..dst + dims[0]].copy_from_slice(&v[src..src + dims[0]]);
                }
            }
            out
        };

        let c = medium.sound_speed.data();
        let rho = medium.density.data();
        let kappa: Vec<f32> = c
            .iter()
            .zip(rho)
            .map(|(&c, &r)| (r as f64 * c as f64 * c as f64) as f32)
            .collect();
        let kappa = pad(&kappa);
        let rho_p = pad(rho);

        // 1/ρ at staggered nodes: mean density of the two neighbours.
        let strides = [1, pdims[0], pdims[0] * pdims[1]];
        let inv_rho = [0, 1, 2].map(|a| {
            let s = strides[a];
            let mut out = vec![0f32; plen];
            for_interior(dims, pdims, |n, ijk| {
                let nb = if ijk[a] + 1 < dims[a] {
                    n + s
                } else if periodic[a] {
                    n + s - dims[a] * s
                } else {
                    n
                };
                let r = 0.5 * (rho_p[n] as f64 + rho_p[nb] as f64);
                out[n] = (1.0 / r) as f32;
            });
            out
        });

        let alpha = medium.alpha_np_per_m();
        let absorb: Vec<f32> = alpha
            .iter()
            .zip(c)
            .map(|(&a, &c)| (-2.0 * a * c as f64 * dt).exp() as f32)
            .collect();
        let absorb = pad(&absorb);

        let c_ref = c_max;
        let profile = |a: usize, x: f64| -> f32 {
            if periodic[a] || layer_voxels == 0 {
                return 1.0;
            }
            let n = dims[a] as f64;
            let l = layer_voxels as f64;
            let depth = if x < l {
                l - x
            } else if x > n - 1.0 - l {
                x - (n - 1.0 - l)
            } else {
                0.0
            };
            let sigma = LAYER_ALPHA * c_ref / spacing_m[a] * (depth / l).powi(3);
            (-0.5 * sigma * dt).exp() as f32
        };
        let layer = [0, 1, 2].map(|a| (0..dims[a]).map(|i| profile(a, i as f64)).collect());
        let layer_half = [0, 1, 2].map(|a| (0..dims[a]).map(|i| profile(a, i as f64 + 0.5)).collect());

        let zeros = || vec![0f32; plen];
        Ok(Solver {
            dims,
            pdims,
            spacing_m,
            dt,
            step: 0,
            periodic,
            kappa,
            inv_rho,
            absorb,
            layer,
            layer_half,
            p: zeros(),
            ps: [zeros(), zeros(), zeros()],
            u: [zeros(), zeros(), zeros()],
            sources: Vec::new(),
            grid,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn padded(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] + HALO) + self.pdims[0] * ((ijk[1] + HALO) + self.pdims[1] * (ijk[2] + HALO))
    }

    /// Monopole at a node whose free-field pressure amplitude in a uniform medium
    /// is `amplitude` at [`SOURCE_REFERENCE_MM`] when driven by a unit sinusoid at `f0`.
    pub fn add_point_source(&mut self, ijk: [usize; 3], amplitude: f64, f0: f64) {
        let n = self.padded(ijk);
        let vol = self.spacing_m.iter().product::<f64>();
        let omega = 2.0 * PI * f0;
        let kappa = self.kappa[n] as f64;
        let rho = 1.0 / self.inv_rho[0][n] as f64;
        // volume-velocity amplitude giving |p| = A·r_ref/r
        let q0 = 4.0 * PI * amplitude * SOURCE_REFERENCE_MM * 1e-3 / (rho * omega);
        self.sources.push(Source {
            node: n,
            weight: (kappa * q0 / vol) as f32,
        });
    }

    /// Planar source filling the plane `index` normal to `axis`; launches plane
    /// waves of pressure amplitude `amplitude` in both directions.
    pub fn add_plane_source(&mut self, axis: usize, index: usize, amplitude: f64) {
        let d = self.dims;
        let (ua, va) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..d[va] {
            for a in 0..d[ua] {
                let mut ijk = [0usize; 3];
                ijk[axis] = index;
                ijk[ua] = a;
                ijk[va] = b;
                let n = self.padded(ijk);
                let kappa = self.kappa[n] as f64;
                let rho = 1.0 / self.inv_rho[axis][n] as f64;
                let c = (kappa / rho).sqrt();
                let qs = 2.0 * amplitude / (rho * c);
                self.sources.push(Source {
                    node: n,
                    weight: (kappa * qs / self.spacing_m[axis]) as f32,
                });
            }
        }
    }

    fn fill_halo(&self, field: &mut [f32]) {
        let [nx, ny, nz] = self.dims;
        let [px, py, _] = self.pdims;
        let strides = [1, px, px * py];
        for a in 0..3 {
            if !self.periodic[a] {
                continue;
            }
            let s = strides[a];
            let n = self.dims[a];
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let ijk = [i, j, k];
                        if ijk[a] != 0 {
                            continue;
                        }
                        let first = self.padded(ijk);
                        // cells -2, -1 <- n-2, n-1 ; cells n, n+1 <- 0, 1
                        field[first - s] = field[first + (n - 1) * s];
                        field[first - 2 * s] = field[first + (n - 2) * s];
                        field[first + n * s] = field[first];
                        field[first + (n + 1) * s] = field[first + s];
                    }
                }
            }
        }
    }

    /// Advance one step; `drive` is the source waveform value at mid-step.
    pub fn step(&mut self, drive: f64) {
        let [nx, ny, nz] = self.dims;
        let [px, py, _] = self.pdims;
        let plane = px * py;
        let dt = self.dt as f32;
        let inv_dx = self.spacing_m.map(|s| (1.0 / s) as f32);
        let any_periodic = self.periodic.iter().any(|&p| p);

        if any_periodic {
            let mut p = std::mem::take(&mut self.p);
            self.fill_halo(&mut p);
            self.p = p;
        }

        {
            let p = &self.p;
            let irho = &self.inv_rho;
            let lh = &self.layer_half;
            let [u0, u1, u2] = &mut self.u;
            u0.par_chunks_mut(plane)
                .zip(u1.par_chunks_mut(plane))
                .zip(u2.par_chunks_mut(plane))
                .enumerate()
                .filter(|(kp, _)| *kp >= HALO && *kp < nz + HALO)
                .for_each(|(kp, ((u0, u1), u2))| {
                    let az = lh[2][kp - HALO];
                    for j in 0..ny {
                        let l0 = px * (j + HALO) + HALO;
                        let n0 = kp * plane + l0;
                        let row = |off: isize| &p[(n0 as isize + off) as usize..][..nx];
                        let (c, xp, xp2, xm) = (row(0), row(1), row(2), row(-1));
                        let sy = px as isize;
                        let (yp, yp2, ym) = (row(sy), row(2 * sy), row(-sy));
                        let sz = plane as isize;
                        let (zp, zp2, zm) = (row(sz), row(2 * sz), row(-sz));
                        let r0 = &irho[0][n0..][..nx];
                        let r1 = &irho[1][n0..][..nx];
                        let r2 = &irho[2][n0..][..nx];
                        let ax = &lh[0][..nx];
                        let ay = lh[1][j];
                        let u0 = &mut u0[l0..][..nx];
                        let u1 = &mut u1[l0..][..nx];
                        let u2 = &mut u2[l0..][..nx];
                        for i in 0..nx {
                            let dpx = (C1 * (xp[i] - c[i]) - C2 * (xp2[i] - xm[i])) * inv_dx[0];
                            let dpy = (C1 * (yp[i] - c[i]) - C2 * (yp2[i] - ym[i])) * inv_dx[1];
                            let dpz = (C1 * (zp[i] - c[i]) - C2 * (zp2[i] - zm[i])) * inv_dx[2];
                            u0[i] = flush(ax[i] * (ax[i] * u0[i] - dt * r0[i] * dpx));
                            u1[i] = flush(ay * (ay * u1[i] - dt * r1[i] * dpy));
                            u2[i] = flush(az * (az * u2[i] - dt * r2[i] * dpz));
                        }
                    }
                });
        }

        if any_periodic {
            let mut u = std::mem::take(&mut self.u);
            for f in u.iter_mut() {
                self.fill_halo(f);
            }
            self.u = u;
        }

        {
            let [ux, uy, uz] = &self.u;
            let kappa = &self.kappa;
            let absorb = &self.absorb;
            let lf = &self.layer;
            let [p0, p1, p2] = &mut self.ps;
            p0.par_chunks_mut(plane)
                .zip(p1.par_chunks_mut(plane))
                .zip(p2.par_chunks_mut(plane))
                .zip(self.p.par_chunks_mut(plane))
                .enumerate()
                .filter(|(kp, _)| *kp >= HALO && *kp < nz + HALO)
                .for_each(|(kp, (((p0, p1), p2), pt))| {
                    let az = lf[2][kp - HALO];
                    for j in 0..ny {
                        let l0 = px * (j + HALO) + HALO;
                        let n0 = kp * plane + l0;
                        let at = |off: isize| (n0 as isize + off) as usize;
                        let sy = px as isize;
                        let sz = plane as isize;
                        let (xc, xm, xp, xm2) = (
                            &ux[at(0)..][..nx],
                            &ux[at(-1)..][..nx],
                            &ux[at(1)..][..nx],
                            &ux[at(-2)..][..nx],
                        );
                        let (yc, ym, yp, ym2) = (
                            &uy[at(0)..][..nx],
                            &uy[at(-sy)..][..nx],
                            &uy[at(sy)..][..nx],
                            &uy[at(-2 * sy)..][..nx],
                        );
                        let (zc, zm, zp, zm2) = (
                            &uz[at(0)..][..nx],
                            &uz[at(-sz)..][..nx],
                            &uz[at(sz)..][..nx],
                            &uz[at(-2 * sz)..][..nx],
                        );
                        let kap = &kappa[n0..][..nx];
                        let damp = &absorb[n0..][..nx];
                        let ax = &lf[0][..nx];
                        let ay = lf[1][j];
                        let p0 = &mut p0[l0..][..nx];
                        let p1 = &mut p1[l0..][..nx];
                        let p2 = &mut p2[l0..][..nx];
                        let pt = &mut pt[l0..][..nx];
                        for i in 0..nx {
                            let dux = (C1 * (xc[i] - xm[i]) - C2 * (xp[i] - xm2[i])) * inv_dx[0];
                            let duy = (C1 * (yc[i] - ym[i]) - C2 * (yp[i] - ym2[i])) * inv_dx[1];
                            let duz = (C1 * (zc[i] - zm[i]) - C2 * (zp[i] - zm2[i])) * inv_dx[2];
                            let kd = dt * kap[i];
                            let a = ax[i];
                            let q0 = flush(damp[i] * a * (a * p0[i] - kd * dux));
                            let q1 = flush(damp[i] * ay * (ay * p1[i] - kd * duy));
                            let q2 = flush(damp[i] * az * (az * p2[i] - kd * duz));
                            p0[i] = q0;
                            p1[i] = q1;
                            p2[i] = q2;
                            pt[i] = q0 + q1 + q2;
                        }
                    }
                });
        }

        if drive != 0.0 {
            let drive = drive as f32;
            for s in &self.sources {
                let inc = dt * s.weight * drive / 3.0;
                let n = s.node;
                self.ps[0][n] += inc;
                self.ps[1][n] += inc;
                self.ps[2][n] += inc;
                self.p[n] = self.ps[0][n] + self.ps[1][n] + self.ps[2][n];
            }
        }
        self.step += 1;
    }

    /// Pressure at an interior node.
    pub fn pressure_at(&self, ijk: [usize; 3]) -> f32 {
        self.p[self.padded(ijk)]
    }

    /// Interior pressure, x fastest.
    pub fn pressure(&self) -> Vec<f32> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                let n = self.padded([0, j, k]);
                out.extend_from_slice(&self.p[n..n + nx]);
            }
        }
        out
    }

    /// Add p² at every interior node into `acc` (x-fastest, interior-sized).
    pub fn accumulate_squared(&self, acc: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        acc.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
            for j in 0..ny {
                let n = self.padded([0, j, k]);
                let row = &self.p[n..n + nx];
                for (a, &v) in plane[nx * j..nx * (j + 1)].iter_mut().zip(row) {
                    *a += v as f64 * v as f64;
                }
            }
        });
    }

    /// Discrete acoustic energy, J.
    ///
    /// Pairs the stored velocity (half a step behind the pressure) with the
    /// velocity the next step would produce, which makes the sum exactly
    /// conserved by the lossless interior scheme:
    /// `Σ p²/2ρc² + ρ u⁻·u⁺/2` over the interior, times the cell volume.
    pub fn energy(&mut self) -> f64 {
        if self.periodic.iter().any(|&p| p) {
            let mut p = std::mem::take(&mut self.p);
            self.fill_halo(&mut p);
            self.p = p;
        }
        let [px, py, _] = self.pdims;
        let strides = [1, px, px * py];
        let dt = self.dt as f32;
        let inv_dx = self.spacing_m.map(|s| (1.0 / s) as f32);
        let p = &self.p;
        let mut e = 0.0;
        for_interior(self.dims, self.pdims, |n, ijk| {
            let pv = p[n] as f64;
            e += pv * pv / (2.0 * self.kappa[n] as f64);
            for a in 0..3 {
                let s = strides[a];
                let dp = (C1 * (p[n + s] - p[n]) - C2 * (p[n + 2 * s] - p[n - s])) * inv_dx[a];
                let l = self.layer_half[a][ijk[a]];
                let u = self.u[a][n];
                let next = l * (l * u - dt * self.inv_rho[a][n] * dp);
                e += 0.5 * u as f64 * next as f64 / self.inv_rho[a][n] as f64;
            }
        });
        e * self.spacing_m.iter().product::<f64>()
    }
}

/// Magnitudes below this are set to zero so that the exponentially small
/// precursor ahead of a wavefront never reaches subnormal floats.
const FLUSH_BELOW: f32 = 1e-30;

#[inline(always)]
fn flush(v: f32) -> f32 {
    if v.abs() < FLUSH_BELOW {
        0.0
    } else {
        v
    }
}

fn for_interior(dims: [usize; 3], pdims: [usize; 3], mut f: impl FnMut(usize, [usize; 3])) {
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let n = (i + HALO) + pdims[0] * ((j + HALO) + pdims[1] * (k + HALO));
                f(n, [i, j, k]);
            }
        }
    }
}

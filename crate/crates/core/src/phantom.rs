//! Analytic layered-shell skull phantoms and controlled sCT-like perturbations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::skull::DEFAULT_THRESHOLD_HU;
use crate::volume::{Grid, Unit, Volume, WorldPoint};

/// Three-layer spherical (or ellipsoidal) shell: cortical / trabecular / cortical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellPhantomSpec {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub cortical_thickness: f64,
    pub cortical_hu: f64,
    pub trabecular_hu: f64,
    #[serde(default = "WorldPoint::origin")]
    pub center: WorldPoint,
    #[serde(default = "unit_scale")]
    pub ellipsoid_scale: [f64; 3],
}

fn unit_scale() -> [f64; 3] {
    [1.0; 3]
}

impl Default for ShellPhantomSpec {
    fn default() -> Self {
        ShellPhantomSpec {
            outer_radius: 40.0,
            inner_radius: 34.0,
            cortical_thickness: 2.0,
            cortical_hu: 2000.0,
            trabecular_hu: 1000.0,
            center: WorldPoint::origin(),
            ellipsoid_scale: unit_scale(),
        }
    }
}

impl ShellPhantomSpec {
    /// Single-material shell (cortical = trabecular).
    pub fn uniform(outer_radius: f64, thickness: f64, hu: f64) -> Self {
        ShellPhantomSpec {
            outer_radius,
            inner_radius: outer_radius - thickness,
            cortical_thickness: thickness / 3.0,
            cortical_hu: hu,
            trabecular_hu: hu,
            center: WorldPoint::origin(),
            ellipsoid_scale: unit_scale(),
        }
    }

    pub fn thickness(&self) -> f64 {
        self.outer_radius - self.inner_radius
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("shell phantom: {msg}")));
        if !(self.inner_radius > 0.0 && self.outer_radius > self.inner_radius) {
            return bad(format!(
                "need 0 < inner_radius < outer_radius, got {} / {}",
                self.inner_radius, self.outer_radius
            ));
        }
        if !(self.cortical_thickness > 0.0) {
            return bad("cortical_thickness must be positive".into());
        }
        if self.outer_radius - self.inner_radius < 2.0 * self.cortical_thickness - 1e-12 {
            return bad(format!(
                "shell of {} mm cannot hold two {} mm cortical layers",
                self.thickness(),
                self.cortical_thickness
            ));
        }
        if !(self.cortical_hu >= self.trabecular_hu && self.trabecular_hu > DEFAULT_THRESHOLD_HU) {
            return bad(format!(
                "need cortical_hu >= trabecular_hu > {DEFAULT_THRESHOLD_HU}, got {} / {}",
                self.cortical_hu, self.trabecular_hu
            ));
        }
        if self.ellipsoid_scale.iter().any(|&s| !(s > 0.0)) {
            return bad("ellipsoid_scale components must be positive".into());
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return bad("center must be finite".into());
        }
        Ok(())
    }

    /// Normalised radial coordinate of a world point (ellipsoid scaling applied first).
    pub fn radius_of(&self, p: &WorldPoint) -> f64 {
        let d = p - self.center;
        let s = self.ellipsoid_scale;
        ((d.x / s[0]).powi(2) + (d.y / s[1]).powi(2) + (d.z / s[2]).powi(2)).sqrt()
    }

    /// HU at a world point by centre-point membership.
    pub fn hu_at(&self, p: &WorldPoint) -> f64 {
        let r = self.radius_of(p);
        if r < self.inner_radius || r > self.outer_radius {
            0.0
        } else if r <= self.inner_radius + self.cortical_thickness
            || r >= self.outer_radius - self.cortical_thickness
        {
            self.cortical_hu
        } else {
            self.trabecular_hu
        }
    }
}

/// Rasterise a shell phantom on a grid centred at the world origin.
pub fn make_shell_phantom(spec: &ShellPhantomSpec, dims: [usize; 3], spacing: [f64; 3]) -> Result<Volume> {
    spec.validate()?;
    let grid = Grid::centered(dims, spacing)?;
    let extent = grid.extent();
    for a in 0..3 {
        let reach = spec.outer_radius * spec.ellipsoid_scale[a];
        let half = 0.5 * extent[a];
        if spec.center[a] - reach < -half || spec.center[a] + reach > half {
            return Err(Error::PhantomOutOfGrid(format!(
                "axis {a}: shell spans [{:.2}, {:.2}] mm but grid covers [{:.2}, {:.2}] mm",
                spec.center[a] - reach,
                spec.center[a] + reach,
                -half,
                half
            )));
        }
    }
    Ok(Volume::from_world_fn(grid, Unit::Hu, |p| spec.hu_at(p) as f32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Gaussian blur σ in mm.
    pub gaussian_sigma: f64,
    /// Standard deviation of additive noise in HU.
    pub noise_sigma: f64,
    pub hu_bias: f64,
    pub rng_seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            gaussian_sigma: 0.5,
            noise_sigma: 0.0,
            hu_bias: 0.0,
            rng_seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.noise_sigma >= 0.0 && self.hu_bias.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "perturbation needs gaussian_sigma >= 0 and noise_sigma >= 0, got {} / {}",
                self.gaussian_sigma, self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Blur the whole volume, then add bias and seeded Gaussian noise on the
/// voxels that were at or above the bone threshold in the input.
pub fn perturb_to_sct(ct: &Volume, p: &PerturbationSpec) -> Result<Volume> {
    ct.require_unit(Unit::Hu, "perturbation input")?;
    p.validate()?;
    let mut out = gaussian_blur(ct, p.gaussian_sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let noise = (p.noise_sigma > 0.0).then(|| Normal::new(0.0, p.noise_sigma).expect("sigma > 0"));
    let bias = p.hu_bias as f32;
    for (o, &src) in out.data_mut().iter_mut().zip(ct.data()) {
        if (src as f64) < DEFAULT_THRESHOLD_HU {
            continue;
        }
        *o += bias;
        if let Some(n) = &noise {
            *o += n.sample(&mut rng) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layered() -> ShellPhantomSpec {
        ShellPhantomSpec {
            outer_radius: 80.0,
            inner_radius: 72.0,
            cortical_thickness: 2.0,
            cortical_hu: 2000.0,
            trabecular_hu: 1000.0,
            ..Default::default()
        }
    }

    #[test]
    fn band_membership() {
        let s = default_layered();
        assert_eq!(s.hu_at(&WorldPoint::new(75.0, 0.0, 0.0)), 1000.0);
        assert_eq!(s.hu_at(&WorldPoint::new(0.0, 79.0, 0.0)), 2000.0);
        assert_eq!(s.hu_at(&WorldPoint::new(0.0, 0.0, 50.0)), 0.0);
        assert_eq!(s.hu_at(&WorldPoint::new(0.0, 0.0, 73.0)), 2000.0);
        assert_eq!(s.hu_at(&WorldPoint::new(81.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn rasterised_values_are_the_three_construction_values() {
        let s = ShellPhantomSpec {
            outer_radius: 10.0,
            inner_radius: 6.0,
            cortical_thickness: 1.0,
            ..Default::default()
        };
        let v = make_shell_phantom(&s, [48, 48, 48], [0.5; 3]).unwrap();
        let mut seen: Vec<f32> = v.data().to_vec();
        seen.sort_by(f32::total_cmp);
        seen.dedup();
        assert_eq!(seen, vec![0.0, 1000.0, 2000.0]);
    }

    #[test]
    fn invalid_specs() {
        let mut s = default_layered();
        s.cortical_thickness = 5.0;
        assert!(s.validate().is_err());
        let mut s = default_layered();
        s.trabecular_hu = 300.0;
        assert!(s.validate().is_err());
        let mut s = default_layered();
        s.cortical_hu = 900.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn phantom_must_fit() {
        let s = ShellPhantomSpec {
            outer_radius: 10.0,
            inner_radius: 6.0,
            cortical_thickness: 1.0,
            center: WorldPoint::new(3.0, 0.0, 0.0),
            ..Default::default()
        };
        assert!(matches!(
            make_shell_phantom(&s, [44, 44, 44], [0.5; 3]),
            Err(Error::PhantomOutOfGrid(_))
        ));
        assert!(make_shell_phantom(&s, [56, 44, 44], [0.5; 3]).is_ok());
    }

    #[test]
    fn ellipsoid_scaling_stretches_axes() {
        let s = ShellPhantomSpec {
            outer_radius: 10.0,
            inner_radius: 6.0,
            cortical_thickness: 1.0,
            ellipsoid_scale: [1.2, 1.0, 0.9],
            ..Default::default()
        };
        assert_eq!(s.hu_at(&WorldPoint::new(11.5, 0.0, 0.0)), 2000.0);
        assert_eq!(s.hu_at(&WorldPoint::new(0.0, 11.5, 0.0)), 0.0);
    }

    fn small_shell() -> Volume {
        let s = ShellPhantomSpec {
            outer_radius: 8.0,
            inner_radius: 5.0,
            cortical_thickness: 1.0,
            cortical_hu: 1500.0,
            trabecular_hu: 1500.0,
            ..Default::default()
        };
        make_shell_phantom(&s, [40, 40, 40], [0.5; 3]).unwrap()
    }

    #[test]
    fn identity_perturbation() {
        let ct = small_shell();
        let p = PerturbationSpec {
            gaussian_sigma: 0.0,
            noise_sigma: 0.0,
            hu_bias: 0.0,
            rng_seed: 9,
        };
        assert_eq!(perturb_to_sct(&ct, &p).unwrap(), ct);
    }

    #[test]
    fn bias_only_inside_skull() {
        let ct = small_shell();
        let p = PerturbationSpec {
            gaussian_sigma: 0.0,
            noise_sigma: 0.0,
            hu_bias: -50.0,
            rng_seed: 0,
        };
        let out = perturb_to_sct(&ct, &p).unwrap();
        for (o, c) in out.data().iter().zip(ct.data()) {
            if *c == 1500.0 {
                assert_eq!(*o, 1450.0);
            } else {
                assert_eq!(*o, 0.0);
            }
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let ct = small_shell();
        let p = PerturbationSpec {
            gaussian_sigma: 0.4,
            noise_sigma: 60.0,
            hu_bias: 10.0,
            rng_seed: 1234,
        };
        let a = perturb_to_sct(&ct, &p).unwrap();
        let b = perturb_to_sct(&ct, &p).unwrap();
        assert_eq!(a.data(), b.data());
        let c = perturb_to_sct(&ct, &PerturbationSpec { rng_seed: 1235, ..p }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn blur_preserves_mass_for_interior_phantoms() {
        let ct = small_shell();
        let p = PerturbationSpec {
            gaussian_sigma: 0.8,
            ..Default::default()
        };
        let out = perturb_to_sct(&ct, &p).unwrap();
        let m0: f64 = ct.data().iter().map(|&v| v as f64).sum();
        let m1: f64 = out.data().iter().map(|&v| v as f64).sum();
        assert!(((m1 - m0) / m0).abs() < 1e-3);
    }
}

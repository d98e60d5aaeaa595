//! CT → acoustic property maps through a linear HU–porosity model.
//!
//! ```text
//! φ   = 1 − clamp(HU, 0, hu_cap) / hu_cap
//! c   = c_min + (c_max − c_min)(1 − φ)
//! ρ   = ρ_min + (ρ_max − ρ_min)(1 − φ)
//! α₀  = a0 · (1 − φ)^absorption_exponent
//! α(f) = α₀ · (f / 1 MHz)^b
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Unit, Volume};

/// Decibels per neper.
pub const DB_PER_NEPER: f64 = 8.685_889_638_065_036;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticConstants {
    /// m/s
    pub c_max: f64,
    pub c_min: f64,
    /// kg/m³
    pub rho_max: f64,
    pub rho_min: f64,
    /// dB·cm⁻¹·MHz⁻ᵇ
    pub a0: f64,
    pub b: f64,
    pub hu_cap: f64,
    /// Exponent on bone fraction for the absorption map.
    pub absorption_exponent: f64,
}

impl Default for AcousticConstants {
    fn default() -> Self {
        AcousticConstants {
            c_max: 3100.0,
            c_min: 1480.0,
            rho_max: 2100.0,
            rho_min: 1000.0,
            a0: 8.1,
            b: 1.1,
            hu_cap: 1000.0,
            absorption_exponent: 1.0,
        }
    }
}

impl AcousticConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_max > self.c_min
            && self.c_min > 0.0
            && self.rho_max > self.rho_min
            && self.rho_min > 0.0
            && self.a0 >= 0.0
            && self.b > 0.0
            && self.hu_cap > 0.0
            && self.absorption_exponent > 0.0
            && [self.c_max, self.rho_max, self.a0, self.b, self.hu_cap, self.absorption_exponent]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid acoustic constants: {self:?}")))
        }
    }

    #[inline]
    pub fn sound_speed(&self, hu: f64) -> f64 {
        self.c_min + (self.c_max - self.c_min) * (1.0 - hu_to_porosity(hu, self.hu_cap))
    }

    #[inline]
    pub fn density(&self, hu: f64) -> f64 {
        self.rho_min + (self.rho_max - self.rho_min) * (1.0 - hu_to_porosity(hu, self.hu_cap))
    }

    #[inline]
    pub fn alpha0(&self, hu: f64) -> f64 {
        let bone = 1.0 - hu_to_porosity(hu, self.hu_cap);
        if bone <= 0.0 {
            0.0
        } else {
            self.a0 * bone.powf(self.absorption_exponent)
        }
    }
}

#[inline]
pub fn hu_to_porosity(hu: f64, hu_cap: f64) -> f64 {
    1.0 - hu.clamp(0.0, hu_cap) / hu_cap
}

/// Power-law absorption in dB/cm at frequency `f_hz`.
#[inline]
pub fn absorption_at(alpha0: f64, b: f64, f_hz: f64) -> f64 {
    alpha0 * (f_hz / 1.0e6).powf(b)
}

/// dB/cm → Np/m.
#[inline]
pub fn db_per_cm_to_np_per_m(alpha_db_cm: f64) -> f64 {
    alpha_db_cm * 100.0 / DB_PER_NEPER
}

#[derive(Debug, Clone)]
pub struct AcousticMedium {
    pub sound_speed: Volume,
    pub density: Volume,
    pub alpha0: Volume,
    pub b: f64,
    pub f0: f64,
}

impl AcousticMedium {
    /// Homogeneous medium on the grid of `like`.
    pub fn homogeneous(like: &Volume, c: f64, rho: f64, alpha0: f64, b: f64, f0: f64) -> Self {
        AcousticMedium {
            sound_speed: like.map(Unit::MPerS, |_| c as f32),
            density: like.map(Unit::KgPerM3, |_| rho as f32),
            alpha0: like.map(Unit::DbCmMhz, |_| alpha0 as f32),
            b,
            f0,
        }
    }

    pub fn max_sound_speed(&self) -> f64 {
        self.sound_speed.min_max().1 as f64
    }

    pub fn min_sound_speed(&self) -> f64 {
        self.sound_speed.min_max().0 as f64
    }

    /// Absorption at f0, Np/m, per voxel.
    pub fn alpha_np_per_m(&self) -> Vec<f64> {
        self.alpha0
            .data()
            .par_iter()
            .map(|&a| db_per_cm_to_np_per_m(absorption_at(a as f64, self.b, self.f0)))
            .collect()
    }
}

pub fn build_medium(ct_skull: &Volume, k: &AcousticConstants, f0: f64) -> Result<AcousticMedium> {
    ct_skull.require_unit(Unit::Hu, "acoustic mapping input")?;
    k.validate()?;
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(Error::InvalidParameter(format!("frequency must be positive, got {f0}")));
    }
    Ok(AcousticMedium {
        sound_speed: ct_skull.map(Unit::MPerS, |hu| k.sound_speed(hu as f64) as f32),
        density: ct_skull.map(Unit::KgPerM3, |hu| k.density(hu as f64) as f32),
        alpha0: ct_skull.map(Unit::DbCmMhz, |hu| k.alpha0(hu as f64) as f32),
        b: k.b,
        f0,
    })
}

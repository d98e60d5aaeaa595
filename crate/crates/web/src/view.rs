//! Plain-Rust half of the demo. Everything here runs natively so it can be
//! tested without a browser; `lib.rs` only wraps it for wasm-bindgen.

use tfus_core::acoustic::{absorption_at, build_medium, AcousticConstants, AcousticMedium};
use tfus_core::phantom::{make_shell_phantom, ShellPhantomSpec};
use tfus_core::pipeline::{extract, plan, PipelineConfig};
use tfus_core::transducer::site_direction;
use tfus_core::{Result, Volume, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Hu,
    SoundSpeed,
    Density,
    Absorption,
}

impl Layer {
    pub fn parse(s: &str) -> Option<Layer> {
        Some(match s {
            "hu" => Layer::Hu,
            "c" => Layer::SoundSpeed,
            "rho" => Layer::Density,
            "alpha" => Layer::Absorption,
            _ => return None,
        })
    }
}

/// A shell phantom with its extracted skull and acoustic maps.
pub struct Scene {
    pub ct: Volume,
    pub ct_skull: Volume,
    pub medium: AcousticMedium,
    pub cfg: PipelineConfig,
    pub target: WorldPoint,
}

impl Scene {
    pub fn new(spec: &ShellPhantomSpec, n: usize, spacing_mm: f64, array_radius_mm: f64) -> Result<Scene> {
        let mut cfg = PipelineConfig::default();
        cfg.array.radius_mm = array_radius_mm;
        cfg.validate()?;
        let ct = make_shell_phantom(spec, [n; 3], [spacing_mm; 3])?;
        let ex = extract(&ct, &cfg.skull)?;
        let medium = build_medium(&ex.ct_skull, &cfg.acoustic, cfg.simulation.f0)?;
        Ok(Scene {
            ct,
            ct_skull: ex.ct_skull,
            medium,
            cfg,
            target: spec.center,
        })
    }

    fn layer(&self, layer: Layer) -> (&Volume, f64, f64) {
        let k = &self.cfg.acoustic;
        match layer {
            Layer::Hu => (&self.ct, -1000.0, 2000.0),
            Layer::SoundSpeed => (&self.medium.sound_speed, k.c_min, k.c_max),
            Layer::Density => (&self.medium.density, k.rho_min, k.rho_max),
            Layer::Absorption => (&self.medium.alpha0, 0.0, k.a0),
        }
    }

    /// RGBA pixels of one plane, row-major with the first in-plane axis fastest.
    /// HU is grey; property maps use a black-red-yellow-white ramp over their physical range.
    pub fn slice_rgba(&self, layer: Layer, axis: usize, index: usize) -> Result<(usize, usize, Vec<u8>)> {
        let (vol, lo, hi) = self.layer(layer);
        let (w, h, values) = vol.slice(axis, index)?;
        let mut out = Vec::with_capacity(w * h * 4);
        for v in values {
            let t = ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
            let rgb = if layer == Layer::Hu { [t, t, t] } else { heat(t) };
            out.extend(rgb.map(|c| (c * 255.0).round() as u8));
            out.push(255);
        }
        Ok((w, h, out))
    }

    pub fn plan(&self, tilt_x: f64, tilt_y: f64) -> Result<ElementMap> {
        let (_, s) = plan(&self.ct_skull, &self.target, (tilt_x, tilt_y), &self.cfg)?;
        let mut m = ElementMap {
            nae: s.nae,
            sdr: s.sdr,
            st_mean: s.st_mean,
            xy: Vec::with_capacity(2 * s.per_element.len()),
            active: Vec::with_capacity(s.per_element.len()),
            angle: Vec::with_capacity(s.per_element.len()),
        };
        for e in &s.per_element {
            let [x, y] = project(e.element_index);
            m.xy.extend([x as f32, y as f32]);
            m.active.push(e.active as u8);
            m.angle.push(e.incident_angle.map_or(f32::NAN, |a| a as f32));
        }
        Ok(m)
    }
}

fn heat(t: f64) -> [f64; 3] {
    [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)]
}

/// Azimuthal equidistant view of site `i` from above the pole, in [-1, 1]².
/// Uses the array frame, so the layout does not move with tilt.
pub fn project(i: usize) -> [f64; 2] {
    let d = site_direction(i);
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let rho = d.x.hypot(d.y);
    if rho < 1e-12 {
        return [0.0, 0.0];
    }
    let r = theta / std::f64::consts::FRAC_PI_2;
    [r * d.x / rho, r * d.y / rho]
}

/// Enabled elements of one pose, in element order.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMap {
    pub nae: usize,
    pub sdr: f64,
    pub st_mean: f64,
    /// Interleaved projected x, y.
    pub xy: Vec<f32>,
    pub active: Vec<u8>,
    /// Incident angle in degrees; NaN where the ray misses the skull.
    pub angle: Vec<f32>,
}

/// Rows of `[hu, c, rho, alpha0, alpha(f)]` for `n` evenly spaced HU values.
pub fn property_curves(k: &AcousticConstants, hu_min: f64, hu_max: f64, n: usize, f_hz: f64) -> Vec<[f64; 5]> {
    (0..n)
        .map(|i| {
            let hu = if n == 1 { hu_min } else { hu_min + (hu_max - hu_min) * i as f64 / (n - 1) as f64 };
            let a0 = k.alpha0(hu);
            [hu, k.sound_speed(hu), k.density(hu), a0, absorption_at(a0, k.b, f_hz)]
        })
        .collect()
}

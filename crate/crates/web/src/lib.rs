//! wasm-bindgen surface of the browser demo in `www/`.
//!
//! Three operations: orthogonal slices of a shell phantom and its acoustic
//! maps, the per-element activity map for a tilt, and HU→property curves.

pub mod view;

use tfus_core::acoustic::AcousticConstants;
use tfus_core::phantom::ShellPhantomSpec;
use tfus_core::WorldPoint;
use wasm_bindgen::prelude::*;

pub use view::{project, property_curves, ElementMap, Layer, Scene};

fn js(e: tfus_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    /// Layered shell centred in an `n`³ grid.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        outer_radius: f64,
        inner_radius: f64,
        cortical_thickness: f64,
        cortical_hu: f64,
        trabecular_hu: f64,
        n: usize,
        spacing_mm: f64,
        array_radius_mm: f64,
    ) -> Result<Demo, JsError> {
        let spec = ShellPhantomSpec {
            outer_radius,
            inner_radius,
            cortical_thickness,
            cortical_hu,
            trabecular_hu,
            center: WorldPoint::origin(),
            ellipsoid_scale: [1.0; 3],
        };
        let scene = Scene::new(&spec, n, spacing_mm, array_radius_mm).map_err(js)?;
        Ok(Demo { scene })
    }

    pub fn size(&self) -> usize {
        self.scene.ct.dims()[0]
    }

    /// `layer` is one of `hu`, `c`, `rho`, `alpha`. The plane is square.
    pub fn slice(&self, layer: &str, axis: usize, index: usize) -> Result<Vec<u8>, JsError> {
        let layer = Layer::parse(layer).ok_or_else(|| JsError::new(&format!("unknown layer {layer:?}")))?;
        self.scene.slice_rgba(layer, axis, index).map(|(_, _, px)| px).map_err(js)
    }

    pub fn plan(&self, tilt_x: f64, tilt_y: f64) -> Result<PlanView, JsError> {
        self.scene.plan(tilt_x, tilt_y).map(|m| PlanView { m }).map_err(js)
    }
}

#[wasm_bindgen]
pub struct PlanView {
    m: ElementMap,
}

#[wasm_bindgen]
impl PlanView {
    #[wasm_bindgen(getter)]
    pub fn nae(&self) -> usize {
        self.m.nae
    }

    #[wasm_bindgen(getter)]
    pub fn sdr(&self) -> f64 {
        self.m.sdr
    }

    #[wasm_bindgen(getter)]
    pub fn st_mean(&self) -> f64 {
        self.m.st_mean
    }

    pub fn xy(&self) -> Vec<f32> {
        self.m.xy.clone()
    }

    pub fn active(&self) -> Vec<u8> {
        self.m.active.clone()
    }

    pub fn angle(&self) -> Vec<f32> {
        self.m.angle.clone()
    }
}

/// Flattened rows of `[hu, c, rho, alpha0, alpha(f)]` with default constants.
#[wasm_bindgen]
pub fn curves(hu_min: f64, hu_max: f64, n: usize, f_hz: f64) -> Vec<f64> {
    property_curves(&AcousticConstants::default(), hu_min, hu_max, n, f_hz)
        .into_iter()
        .flatten()
        .collect()
}

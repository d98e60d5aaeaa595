//! Full-wave pressure simulation of the array through an acoustic medium.

mod solver;

pub use solver::{Solver, ToneBurst, SOURCE_REFERENCE_MM};

use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticMedium;
use crate::error::{Error, Result};
use crate::transducer::TransducerArray;
use crate::volume::{Unit, Volume, WorldPoint};

/// Below this many points per wavelength in water the run is refused.
pub const MIN_PPW: f64 = 3.0;
pub const WARN_PPW: f64 = 6.0;
pub const WATER_SOUND_SPEED: f64 = 1480.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Hz
    pub f0: f64,
    pub n_cycles: f64,
    pub cfl: f64,
    pub absorbing_layer_voxels: usize,
    pub rms_window_cycles: f64,
    pub ramp_cycles: f64,
    /// Pa; free-field amplitude of one element at 10 mm in water.
    pub source_amplitude: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            f0: 650e3,
            n_cycles: 100.0,
            cfl: 0.3,
            absorbing_layer_voxels: 10,
            rms_window_cycles: 10.0,
            ramp_cycles: 5.0,
            source_amplitude: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::Unstable(format!("cfl must lie in (0, 0.5], got {}", self.cfl)));
        }
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("f0 must be positive, got {}", self.f0));
        }
        if !(self.n_cycles > 0.0 && self.n_cycles.is_finite()) {
            return bad(format!("n_cycles must be positive, got {}", self.n_cycles));
        }
        if !(self.rms_window_cycles > 0.0 && self.rms_window_cycles <= self.n_cycles) {
            return bad(format!(
                "rms_window_cycles must lie in (0, n_cycles], got {}",
                self.rms_window_cycles
            ));
        }
        if !(self.ramp_cycles >= 0.0 && self.ramp_cycles <= self.n_cycles) {
            return bad(format!("ramp_cycles must lie in [0, n_cycles], got {}", self.ramp_cycles));
        }
        if self.absorbing_layer_voxels < 4 {
            return bad(format!(
                "absorbing_layer_voxels must be at least 4, got {}",
                self.absorbing_layer_voxels
            ));
        }
        if !self.source_amplitude.is_finite() {
            return bad("source_amplitude must be finite".into());
        }
        Ok(())
    }

    pub fn burst(&self) -> ToneBurst {
        ToneBurst {
            f0: self.f0,
            n_cycles: self.n_cycles,
            ramp_cycles: self.ramp_cycles,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PressureResult {
    pub rms: Volume,
    pub max_rms: f64,
    pub argmax: WorldPoint,
    /// mm
    pub focal_shift: f64,
    pub target: WorldPoint,
    pub points_per_wavelength: f64,
    pub steps: usize,
    /// s
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalMetrics {
    pub max_rms: f64,
    pub argmax: WorldPoint,
    pub focal_shift: f64,
}

/// Points per wavelength in water for the grid's coarsest axis.
pub fn points_per_wavelength(spacing_mm: [f64; 3], f0: f64) -> f64 {
    let dx = spacing_mm.iter().copied().fold(0.0, f64::max) * 1e-3;
    WATER_SOUND_SPEED / (f0 * dx)
}

pub fn simulate(
    medium: &AcousticMedium,
    array: &TransducerArray,
    cfg: &SimulationConfig,
    intracranial_mask: &Volume,
) -> Result<PressureResult> {
    simulate_with_progress(medium, array, cfg, intracranial_mask, &|_| {})
}

/// As [`simulate`], reporting the completed fraction after every step.
pub fn simulate_with_progress(
    medium: &AcousticMedium,
    array: &TransducerArray,
    cfg: &SimulationConfig,
    intracranial_mask: &Volume,
    progress: &(dyn Fn(f64) + Sync),
) -> Result<PressureResult> {
    cfg.validate()?;
    let grid = medium.sound_speed.grid().clone();
    if !grid.same_geometry(intracranial_mask.grid()) {
        return Err(Error::DimensionMismatch(format!(
            "intracranial mask grid {:?} differs from medium grid {:?}",
            intracranial_mask.dims(),
            grid.dims()
        )));
    }
    if intracranial_mask.count_nonzero() == 0 {
        return Err(Error::EmptyMask);
    }
    if (medium.f0 - cfg.f0).abs() > 1e-9 * cfg.f0 {
        return Err(Error::InvalidParameter(format!(
            "medium was mapped at {} Hz but the simulation runs at {} Hz",
            medium.f0, cfg.f0
        )));
    }
    let ppw = points_per_wavelength(grid.spacing(), cfg.f0);
    if ppw < MIN_PPW {
        return Err(Error::InvalidParameter(format!(
            "{ppw:.2} points per wavelength in water, at least {MIN_PPW} required"
        )));
    }
    if ppw < WARN_PPW {
        log::warn!("{ppw:.2} points per wavelength in water; expect numerical dispersion");
    }

    let margin = cfg.absorbing_layer_voxels;
    let dims = grid.dims();
    let node_in_core = |p: &WorldPoint, what: &str| -> Result<[usize; 3]> {
        let idx = grid.world_to_index(p);
        let ijk = idx.map(|v| v.round());
        let ok = (0..3).all(|a| ijk[a] >= margin as f64 && ijk[a] <= (dims[a] - 1 - margin) as f64);
        if ok {
            Ok(ijk.map(|v| v as usize))
        } else {
            Err(Error::outside(what, p))
        }
    };
    node_in_core(&array.focus(), "focus")?;

    let mut solver = Solver::new(medium, cfg.cfl, margin, [false; 3])?;
    for e in array.enabled() {
        let ijk = node_in_core(&e.position, &format!("element {}", e.index))?;
        solver.add_point_source(ijk, cfg.source_amplitude, cfg.f0);
    }

    let burst = cfg.burst();
    let dt = solver.dt();
    let steps = (burst.duration() / dt).ceil() as usize;
    let window = ((cfg.rms_window_cycles / cfg.f0) / dt).round().max(1.0) as usize;
    let window = window.min(steps);
    let mut acc = vec![0f64; grid.len()];
    for n in 0..steps {
        let t_mid = (n as f64 + 0.5) * dt;
        solver.step(burst.value(t_mid));
        if n + window >= steps {
            solver.accumulate_squared(&mut acc);
        }
        progress((n + 1) as f64 / steps as f64);
    }
    let rms: Vec<f32> = acc.iter().map(|&s| (s / window as f64).sqrt() as f32).collect();
    let rms = Volume::new(grid, rms, Unit::Pa)?;
    let target = array.focus();
    let fm = focal_metrics(&rms, intracranial_mask, &target)?;
    Ok(PressureResult {
        rms,
        max_rms: fm.max_rms,
        argmax: fm.argmax,
        focal_shift: fm.focal_shift,
        target,
        points_per_wavelength: ppw,
        steps,
        dt,
    })
}

pub fn focal_metrics(rms: &Volume, mask: &Volume, target: &WorldPoint) -> Result<FocalMetrics> {
    if rms.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "rms {:?} vs mask {:?}",
            rms.dims(),
            mask.dims()
        )));
    }
    let mut best: Option<(usize, f32)> = None;
    for (i, (&v, &m)) in rms.data().iter().zip(mask.data()).enumerate() {
        if m == 0.0 {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (idx, max) = best.ok_or(Error::EmptyMask)?;
    let [i, j, k] = rms.grid().coords(idx);
    let argmax = rms.grid().voxel_center(i, j, k);
    Ok(FocalMetrics {
        max_rms: max as f64,
        argmax,
        focal_shift: (argmax - target).norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid(n: usize) -> Grid {
        Grid::centered([n; 3], [0.5; 3]).unwrap()
    }

    #[test]
    fn defaults_validate() {
        SimulationConfig::default().validate().unwrap();
        let mut c = SimulationConfig::default();
        c.cfl = 0.6;
        assert!(matches!(c.validate(), Err(Error::Unstable(_))));
        let mut c = SimulationConfig::default();
        c.rms_window_cycles = 120.0;
        assert!(c.validate().is_err());
        let mut c = SimulationConfig::default();
        c.absorbing_layer_voxels = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn burst_shape() {
        let b = ToneBurst { f0: 1.0, n_cycles: 10.0, ramp_cycles: 2.0 };
        assert_eq!(b.value(-0.1), 0.0);
        assert_eq!(b.value(10.5), 0.0);
        assert!((b.value(5.25) - 1.0).abs() < 1e-12);
        let env = 0.5 * (1.0 - (std::f64::consts::PI * 1.25 / 2.0).cos());
        assert!((b.value(1.25) - env).abs() < 1e-12);
    }

    #[test]
    fn ppw_at_half_mm_grid() {
        let ppw = points_per_wavelength([0.5; 3], 650e3);
        assert!((ppw - 4.5538).abs() < 1e-3, "{ppw}");
    }

    #[test]
    fn focal_metrics_at_target() {
        let g = grid(5);
        let mut rms = Volume::filled(g.clone(), 1.0, Unit::Pa);
        let c = g.linear(2, 2, 2);
        rms.data_mut()[c] = 5.0;
        let mask = Volume::filled(g.clone(), 1.0, Unit::Dimensionless);
        let m = focal_metrics(&rms, &mask, &g.voxel_center(2, 2, 2)).unwrap();
        assert_eq!(m.max_rms, 5.0);
        assert_eq!(m.focal_shift, 0.0);

        rms.data_mut()[c] = 1.0;
        rms.data_mut()[g.linear(3, 2, 2)] = 5.0;
        let m = focal_metrics(&rms, &mask, &g.voxel_center(2, 2, 2)).unwrap();
        assert!((m.focal_shift - 0.5).abs() < 1e-12);
    }

    #[test]
    fn focal_metrics_respects_mask_and_ties() {
        let g = grid(4);
        let mut rms = Volume::filled(g.clone(), 0.0, Unit::Pa);
        rms.data_mut()[g.linear(0, 0, 0)] = 10.0;
        rms.data_mut()[g.linear(1, 1, 1)] = 3.0;
        rms.data_mut()[g.linear(2, 1, 1)] = 3.0;
        let mut mask = Volume::filled(g.clone(), 1.0, Unit::Dimensionless);
        mask.data_mut()[0] = 0.0;
        let m = focal_metrics(&rms, &mask, &WorldPoint::origin()).unwrap();
        assert_eq!(m.max_rms, 3.0);
        assert_eq!(m.argmax, g.voxel_center(1, 1, 1));

        let empty = Volume::filled(g, 0.0, Unit::Dimensionless);
        assert!(matches!(focal_metrics(&rms, &empty, &WorldPoint::origin()), Err(Error::EmptyMask)));
    }
}

//! End-to-end planning and paired rCT/sCT comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{build_medium, AcousticConstants};
use crate::error::{Error, Result, ResultExt, Stage};
use crate::eval::{element_overlap, mae_skull, pressure_deficit_pct, CaseComparison, Pair};
use crate::phantom::{make_shell_phantom, perturb_to_sct, PerturbationSpec, ShellPhantomSpec};
use crate::ray::{PlanSummary, RayCaster, DEFAULT_RAY_STEP_MM};
use crate::skull::{
    apply_mask, extract_skull_mask, intracranial_mask, SkullMask, DEFAULT_DILATION_MM, DEFAULT_THRESHOLD_HU,
};
use crate::transducer::{build_array, check_tilt, optimize_tilt, TiltOptimum, TransducerArray, DEFAULT_RADIUS_MM};
use crate::volume::{Volume, WorldPoint};
use crate::wavesim::{simulate_with_progress, PressureResult, SimulationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkullConfig {
    pub threshold_hu: f64,
    pub dilation_mm: f64,
}

impl Default for SkullConfig {
    fn default() -> Self {
        SkullConfig {
            threshold_hu: DEFAULT_THRESHOLD_HU,
            dilation_mm: DEFAULT_DILATION_MM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub radius_mm: f64,
    /// Pose used when `optimize_tilt` is off, degrees.
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub optimize_tilt: bool,
    pub tilt_step_deg: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            radius_mm: DEFAULT_RADIUS_MM,
            tilt_x: 0.0,
            tilt_y: 0.0,
            optimize_tilt: true,
            tilt_step_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub skull: SkullConfig,
    pub array: ArrayConfig,
    pub ray_step_mm: f64,
    pub acoustic: AcousticConstants,
    pub simulation: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            skull: SkullConfig::default(),
            array: ArrayConfig::default(),
            ray_step_mm: DEFAULT_RAY_STEP_MM,
            acoustic: AcousticConstants::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.skull.threshold_hu.is_finite() || !(self.skull.dilation_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid skull settings {:?}", self.skull)));
        }
        if !(self.array.radius_mm > 0.0 && self.array.radius_mm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "array radius must be positive, got {}",
                self.array.radius_mm
            )));
        }
        check_tilt(self.array.tilt_x, self.array.tilt_y)?;
        if !(self.array.tilt_step_deg > 0.0) {
            return Err(Error::InvalidParameter("tilt step must be positive".into()));
        }
        if !(self.ray_step_mm > 0.0 && self.ray_step_mm.is_finite()) {
            return Err(Error::InvalidParameter("ray step must be positive".into()));
        }
        self.acoustic.validate()?;
        self.simulation.validate()
    }
}

/// Skull mask plus the CT restricted to it.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub skull: SkullMask,
    pub ct_skull: Volume,
}

pub fn extract(ct: &Volume, cfg: &SkullConfig) -> Result<Extracted> {
    let skull = extract_skull_mask(ct, cfg.threshold_hu, cfg.dilation_mm).stage(Stage::Extract)?;
    let ct_skull = apply_mask(ct, &skull).stage(Stage::Extract)?;
    Ok(Extracted { skull, ct_skull })
}

/// Pose maximising NAE on `ct_skull`, or the configured fixed pose.
pub fn choose_pose(ct_skull: &Volume, target: &WorldPoint, cfg: &PipelineConfig) -> Result<(f64, f64)> {
    let a = &cfg.array;
    if !a.optimize_tilt {
        check_tilt(a.tilt_x, a.tilt_y).stage(Stage::Plan)?;
        return Ok((a.tilt_x, a.tilt_y));
    }
    let best = best_pose(ct_skull, target, cfg)?;
    Ok((best.tilt_x, best.tilt_y))
}

/// Exhaustive tilt search regardless of `optimize_tilt`.
pub fn best_pose(ct_skull: &Volume, target: &WorldPoint, cfg: &PipelineConfig) -> Result<TiltOptimum> {
    let a = &cfg.array;
    let caster = RayCaster::new(ct_skull, cfg.skull.threshold_hu, cfg.ray_step_mm).stage(Stage::Plan)?;
    optimize_tilt(
        |tx, ty| build_array(a.radius_mm, *target, tx, ty),
        |arr| caster.nae(arr),
        a.tilt_step_deg,
    )
    .stage(Stage::Plan)
}

pub fn plan(
    ct_skull: &Volume,
    target: &WorldPoint,
    tilt: (f64, f64),
    cfg: &PipelineConfig,
) -> Result<(TransducerArray, PlanSummary)> {
    let array = build_array(cfg.array.radius_mm, *target, tilt.0, tilt.1).stage(Stage::Plan)?;
    let caster = RayCaster::new(ct_skull, cfg.skull.threshold_hu, cfg.ray_step_mm).stage(Stage::Plan)?;
    let summary = caster.plan(&array).stage(Stage::Plan)?;
    Ok((array, summary))
}

pub fn simulate_extracted(
    ex: &Extracted,
    array: &TransducerArray,
    cfg: &PipelineConfig,
    progress: &(dyn Fn(f64) + Sync),
) -> Result<PressureResult> {
    let medium = build_medium(&ex.ct_skull, &cfg.acoustic, cfg.simulation.f0).stage(Stage::Map)?;
    let cavity = intracranial_mask(&ex.skull, &array.focus()).stage(Stage::Simulate)?;
    simulate_with_progress(&medium, array, &cfg.simulation, &cavity, progress).stage(Stage::Simulate)
}

/// Everything computed for one member of a pair.
#[derive(Debug, Clone)]
pub struct VolumeRun {
    pub extracted: Extracted,
    pub plan: PlanSummary,
    pub pressure: PressureResult,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub comparison: CaseComparison,
    pub rct: VolumeRun,
    pub sct: VolumeRun,
}

/// Full pipeline on both volumes with the pose chosen on the sCT and reused for the rCT.
pub fn compare_case(
    case_id: &str,
    rct: &Volume,
    sct: &Volume,
    target: &WorldPoint,
    cfg: &PipelineConfig,
) -> Result<CaseOutcome> {
    cfg.validate()?;
    rct.require_same_grid(sct, "sCT").stage(Stage::Load)?;
    if !rct.grid().contains(target) {
        return Err(Error::outside("target", target).at(Stage::Plan));
    }
    let ex_r = extract(rct, &cfg.skull)?;
    let ex_s = extract(sct, &cfg.skull)?;
    let tilt = choose_pose(&ex_s.ct_skull, target, cfg)?;
    let (array, plan_s) = plan(&ex_s.ct_skull, target, tilt, cfg)?;
    let (_, plan_r) = plan(&ex_r.ct_skull, target, tilt, cfg)?;

    let overlap = element_overlap(&plan_r.per_element, &plan_s.per_element).stage(Stage::Compare)?;
    let mae = mae_skull(rct, sct, &ex_r.skull).stage(Stage::Compare)?;

    let p_r = simulate_extracted(&ex_r, &array, cfg, &|_| {})?;
    let p_s = simulate_extracted(&ex_s, &array, cfg, &|_| {})?;

    let comparison = CaseComparison {
        case_id: case_id.to_string(),
        mae_skull: mae,
        nae: Pair { rct: plan_r.nae, sct: plan_s.nae },
        sdr: Pair { rct: plan_r.sdr, sct: plan_s.sdr },
        st: Pair { rct: plan_r.st_mean, sct: plan_s.st_mean },
        overlap,
        overlap_fraction: overlap.fraction(),
        max_rms: Pair { rct: p_r.max_rms, sct: p_s.max_rms },
        pressure_deficit_pct: pressure_deficit_pct(p_r.max_rms, p_s.max_rms),
        focal_shift: Pair { rct: p_r.focal_shift, sct: p_s.focal_shift },
        argmax_distance: (p_r.argmax - p_s.argmax).norm(),
        tilt_x: tilt.0,
        tilt_y: tilt.1,
    };
    Ok(CaseOutcome {
        comparison,
        rct: VolumeRun { extracted: ex_r, plan: plan_r, pressure: p_r },
        sct: VolumeRun { extracted: ex_s, plan: plan_s, pressure: p_s },
    })
}

#[derive(Debug, Clone)]
pub struct CaseInput {
    pub case_id: String,
    pub rct: Volume,
    pub sct: Volume,
    pub target: WorldPoint,
}

/// Run cases in parallel; rows come back sorted by case id.
pub fn compare_batch<F>(n_cases: usize, make_case: F, cfg: &PipelineConfig) -> Result<Vec<CaseComparison>>
where
    F: Fn(usize) -> Result<CaseInput> + Sync,
{
    let mut rows = (0..n_cases)
        .into_par_iter()
        .map(|i| {
            let c = make_case(i).stage(Stage::Load)?;
            compare_case(&c.case_id, &c.rct, &c.sct, &c.target, cfg).map(|o| o.comparison)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(rows)
}

/// Seeded family of shell-phantom pairs: the rCT is a jittered layered shell,
/// the sCT its blurred and noisy copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub cases: usize,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub base: ShellPhantomSpec,
    /// Relative jitter of radii and of each ellipsoid semi-axis.
    pub radius_jitter: f64,
    pub cortical_hu_range: [f64; 2],
    pub trabecular_hu_range: [f64; 2],
    pub sigma_range_mm: [f64; 2],
    pub noise_sigma_hu: f64,
    pub hu_bias: f64,
    /// Targets are drawn uniformly in a ball of this radius about the shell centre.
    pub target_offset_mm: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            cases: 10,
            seed: 7,
            dims: [113, 113, 113],
            spacing_mm: 0.5,
            base: ShellPhantomSpec {
                outer_radius: 12.0,
                inner_radius: 8.0,
                cortical_thickness: 1.0,
                cortical_hu: 1800.0,
                trabecular_hu: 750.0,
                ..Default::default()
            },
            radius_jitter: 0.05,
            cortical_hu_range: [1600.0, 2000.0],
            trabecular_hu_range: [600.0, 900.0],
            sigma_range_mm: [0.35, 0.8],
            noise_sigma_hu: 20.0,
            hu_bias: 0.0,
            target_offset_mm: 4.5,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r.iter().all(|v| v.is_finite());
        let ok = self.cases >= 1
            && self.dims.iter().all(|&d| d >= 1)
            && self.spacing_mm > 0.0
            && (0.0..0.5).contains(&self.radius_jitter)
            && ordered(self.cortical_hu_range)
            && ordered(self.trabecular_hu_range)
            && ordered(self.sigma_range_mm)
            && self.sigma_range_mm[0] >= 0.0
            && self.noise_sigma_hu >= 0.0
            && self.target_offset_mm >= 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid cohort settings: {self:?}")));
        }
        self.base.validate()
    }

    pub fn case_id(&self, index: usize) -> String {
        format!("case{index:03}")
    }

    /// Draws for case `index`; independent of how many cases are generated.
    pub fn case_specs(&self, index: usize) -> (ShellPhantomSpec, PerturbationSpec, WorldPoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut u = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let j = self.radius_jitter;
        let mut spec = self.base.clone();
        let s = u(1.0 - j, 1.0 + j);
        spec.outer_radius *= s;
        spec.inner_radius *= s;
        spec.ellipsoid_scale = [u(1.0 - j, 1.0 + j), u(1.0 - j, 1.0 + j), u(1.0 - j, 1.0 + j)];
        spec.cortical_hu = u(self.cortical_hu_range[0], self.cortical_hu_range[1]);
        spec.trabecular_hu = u(self.trabecular_hu_range[0], self.trabecular_hu_range[1]);
        let sigma = u(self.sigma_range_mm[0], self.sigma_range_mm[1]);
        // uniform in the ball by rejection from the enclosing cube
        let offset = loop {
            let v = WorldPoint::new(u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0));
            if v.coords.norm_squared() <= 1.0 {
                break v.coords * self.target_offset_mm;
            }
        };
        let pert = PerturbationSpec {
            gaussian_sigma: sigma,
            noise_sigma: self.noise_sigma_hu,
            hu_bias: self.hu_bias,
            rng_seed: self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
        };
        let target = spec.center + offset;
        (spec, pert, target)
    }

    pub fn make_case(&self, index: usize) -> Result<CaseInput> {
        let (spec, pert, target) = self.case_specs(index);
        let rct = make_shell_phantom(&spec, self.dims, [self.spacing_mm; 3]).stage(Stage::Phantom)?;
        let sct = perturb_to_sct(&rct, &pert).stage(Stage::Phantom)?;
        Ok(CaseInput {
            case_id: self.case_id(index),
            rct,
            sct,
            target,
        })
    }
}

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use tfus_core::config::PhantomConfig;
use tfus_core::phantom::{make_shell_phantom, perturb_to_sct, PerturbationSpec};
use tfus_core::pipeline::{best_pose, plan};
use tfus_core::transducer::check_tilt;
use tfus_core::volume::read_volume;
use tfus_core::{Stage, Volume, WorldPoint};

use crate::error::ApiError;
use crate::jobs::{submit, JobStatus, SimRequest};
use crate::state::{AppState, Case, VolumeChoice};

type ApiResult<T> = Result<T, ApiError>;
type AppRef = State<Arc<AppState>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn find_case(state: &AppState, id: &str) -> ApiResult<Arc<Case>> {
    state.case(id).ok_or_else(|| ApiError::not_found("case", id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin: WorldPoint,
    pub has_sct: bool,
    pub target: WorldPoint,
    pub simulated: Vec<VolumeChoice>,
}

impl CaseInfo {
    fn of(c: &Case) -> Self {
        CaseInfo {
            id: c.id.clone(),
            dims: c.rct.dims(),
            spacing_mm: c.rct.spacing(),
            origin: c.rct.grid().origin(),
            has_sct: c.sct.is_some(),
            target: c.target,
            simulated: c.simulated(),
        }
    }
}

/// Either volume files or an analytic phantom (with an optional perturbed sCT).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterCase {
    pub id: Option<String>,
    pub rct_path: Option<PathBuf>,
    pub sct_path: Option<PathBuf>,
    pub phantom: Option<PhantomConfig>,
    pub perturbation: Option<PerturbationSpec>,
    pub target: Option<WorldPoint>,
}

pub async fn list_cases(State(state): AppRef) -> Json<Vec<CaseInfo>> {
    let mut v: Vec<CaseInfo> = state.list_cases().iter().map(|c| CaseInfo::of(c)).collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    Json(v)
}

fn load_case(req: RegisterCase, id: String) -> ApiResult<Case> {
    let core = |e: tfus_core::Error, stage| ApiError::from_core(&e, Some(stage));
    let (rct, sct, default_target) = match (&req.rct_path, &req.phantom) {
        (Some(rp), None) => {
            if req.perturbation.is_some() {
                return Err(ApiError::validation(Some(Stage::Load), "perturbation applies to phantom cases only"));
            }
            let rct = read_volume(rp).map_err(|e| core(e, Stage::Load))?;
            let sct = match &req.sct_path {
                Some(sp) => {
                    let s = read_volume(sp).map_err(|e| core(e, Stage::Load))?;
                    rct.require_same_grid(&s, "sCT").map_err(|e| core(e, Stage::Load))?;
                    Some(s)
                }
                None => None,
            };
            let d = rct.dims();
            let centre = rct.grid().index_to_world([0, 1, 2].map(|a| (d[a] as f64 - 1.0) / 2.0));
            (rct, sct, centre)
        }
        (None, Some(p)) => {
            if req.sct_path.is_some() {
                return Err(ApiError::validation(Some(Stage::Load), "sct_path needs rct_path"));
            }
            let rct = make_shell_phantom(&p.shell, p.dims, p.spacing_mm).map_err(|e| core(e, Stage::Phantom))?;
            let sct = match &req.perturbation {
                Some(pert) => Some(perturb_to_sct(&rct, pert).map_err(|e| core(e, Stage::Phantom))?),
                None => None,
            };
            (rct, sct, p.target)
        }
        _ => {
            return Err(ApiError::validation(
                Some(Stage::Load),
                "give exactly one of rct_path or phantom",
            ))
        }
    };
    let target = req.target.unwrap_or(default_target);
    if !rct.grid().contains(&target) {
        return Err(ApiError::validation(Some(Stage::Load), format!("target {target} lies outside the volume")));
    }
    Ok(Case::new(id, rct, sct, target))
}

pub async fn register_case(State(state): AppRef, Json(req): Json<RegisterCase>) -> ApiResult<(StatusCode, Json<CaseInfo>)> {
    let id = match &req.id {
        Some(id) if id.is_empty() || id.contains('/') => {
            return Err(ApiError::validation(None, format!("invalid case id {id:?}")))
        }
        Some(id) => id.clone(),
        None => state.fresh_case_id(),
    };
    let case = blocking(move || load_case(req, id)).await?;
    let case = state.insert_case(case);
    Ok((StatusCode::CREATED, Json(CaseInfo::of(&case))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    #[default]
    Rct,
    Sct,
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceFormat {
    #[default]
    Png,
    Raw,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceQuery {
    #[serde(default)]
    pub kind: SliceKind,
    /// For `kind=rms`: which simulation to show.
    #[serde(default)]
    pub volume: VolumeChoice,
    pub axis: Option<usize>,
    pub index: Option<usize>,
    pub window: Option<f64>,
    pub level: Option<f64>,
    #[serde(default)]
    pub format: SliceFormat,
}

/// 8-bit window/level mapping.
pub fn window_level(values: &[f32], window: f64, level: f64) -> Vec<u8> {
    let lo = level - window / 2.0;
    values
        .iter()
        .map(|&v| (((v as f64 - lo) / window).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_png(width: usize, height: usize, gray: &[u8]) -> ApiResult<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| ApiError::internal(e.to_string()))?;
    w.write_image_data(gray).map_err(|e| ApiError::internal(e.to_string()))?;
    w.finish().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(out)
}

fn header(v: impl ToString) -> HeaderValue {
    HeaderValue::from_str(&v.to_string()).expect("ascii header")
}

pub async fn get_slice(
    State(state): AppRef,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let case = find_case(&state, &id)?;
    blocking(move || {
        let rms;
        let vol: &Volume = match q.kind {
            SliceKind::Rct => &case.rct,
            SliceKind::Sct => case
                .sct
                .as_ref()
                .ok_or_else(|| ApiError::not_available(format!("case {id} has no sCT")))?,
            SliceKind::Rms => {
                rms = case.rms(q.volume).ok_or_else(|| {
                    ApiError::not_available(format!("no finished simulation on the {:?} volume of case {id}", q.volume))
                })?;
                &rms
            }
        };
        let axis = q.axis.unwrap_or(2);
        let index = q.index.unwrap_or_else(|| vol.dims().get(axis).map_or(0, |d| d / 2));
        let (w, h, values) = vol.slice(axis, index).map_err(|e| ApiError::from_core(&e, None))?;

        let mut headers = HeaderMap::new();
        headers.insert("x-width", header(w));
        headers.insert("x-height", header(h));
        headers.insert("x-axis", header(axis));
        headers.insert("x-index", header(index));
        headers.insert("x-unit", header(vol.unit().as_str()));
        if q.format == SliceFormat::Raw {
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            return Ok((headers, bytes).into_response());
        }
        let (default_w, default_l) = match q.kind {
            SliceKind::Rms => {
                let max = vol.min_max().1.max(f32::MIN_POSITIVE) as f64;
                (max, max / 2.0)
            }
            _ => (2000.0, 1000.0),
        };
        let window = q.window.unwrap_or(default_w);
        let level = q.level.unwrap_or(default_l);
        if !(window > 0.0 && window.is_finite() && level.is_finite()) {
            return Err(ApiError::validation(None, "window must be positive and level finite"));
        }
        let png = encode_png(w, h, &window_level(&values, window, level))?;
        headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
        headers.insert("x-window", header(window));
        headers.insert("x-level", header(level));
        Ok((headers, png).into_response())
    })
    .await
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub target: Option<WorldPoint>,
    #[serde(default)]
    pub tilt_x: f64,
    #[serde(default)]
    pub tilt_y: f64,
    #[serde(default)]
    pub volume: VolumeChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub case_id: String,
    pub volume: VolumeChoice,
    pub target: WorldPoint,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub nae: usize,
    pub sdr: f64,
    pub st_mean: f64,
    /// One flag per enabled element, in element order.
    pub active: Vec<bool>,
}

fn resolve(case: &Case, req: &PlanRequest, stage: Stage) -> ApiResult<SimRequest> {
    check_tilt(req.tilt_x, req.tilt_y).map_err(|e| ApiError::from_core(&e, Some(stage)))?;
    let target = req.target.unwrap_or(case.target);
    if !case.rct.grid().contains(&target) {
        return Err(ApiError::validation(Some(stage), format!("target {target} lies outside the volume")));
    }
    if case.volume(req.volume).is_none() {
        return Err(ApiError::not_available(format!("case {} has no sCT", case.id)));
    }
    Ok(SimRequest {
        volume: req.volume,
        target,
        tilt_x: req.tilt_x,
        tilt_y: req.tilt_y,
    })
}

fn run_plan(state: &AppState, case: &Case, r: SimRequest) -> ApiResult<tfus_core::ray::PlanSummary> {
    let vol = case.volume(r.volume).expect("resolved");
    let core = |e: tfus_core::Error| ApiError::from_core(&e, Some(Stage::Plan));
    let ex = case.extracted(r.volume, &state.cfg, vol).map_err(core)?;
    let (_, summary) = plan(&ex.ct_skull, &r.target, (r.tilt_x, r.tilt_y), &state.cfg.pipeline).map_err(core)?;
    Ok(summary)
}

pub async fn post_plan(
    State(state): AppRef,
    Path(id): Path<String>,
    Json(req): Json<PlanRequest>,
) -> ApiResult<Json<PlanResponse>> {
    let case = find_case(&state, &id)?;
    let r = resolve(&case, &req, Stage::Plan)?;
    let summary = blocking(move || run_plan(&state, &case, r)).await?;
    Ok(Json(PlanResponse {
        case_id: id,
        volume: r.volume,
        target: r.target,
        tilt_x: r.tilt_x,
        tilt_y: r.tilt_y,
        nae: summary.nae,
        sdr: summary.sdr,
        st_mean: summary.st_mean,
        active: summary.activity(),
    }))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementsQuery {
    pub tilt_x: Option<f64>,
    pub tilt_y: Option<f64>,
    /// `x,y,z` in mm.
    pub target: Option<String>,
    pub volume: Option<VolumeChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementOut {
    pub index: usize,
    pub position: WorldPoint,
    pub active: bool,
    pub incident_angle: Option<f64>,
    pub skull_thickness: f64,
    pub sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementsResponse {
    pub case_id: String,
    pub volume: VolumeChoice,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub nae: usize,
    pub elements: Vec<ElementOut>,
}

fn parse_point(s: &str) -> ApiResult<WorldPoint> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::validation(Some(Stage::Plan), format!("target {s:?} is not x,y,z")))?;
    match v[..] {
        [x, y, z] => Ok(WorldPoint::new(x, y, z)),
        _ => Err(ApiError::validation(Some(Stage::Plan), format!("target {s:?} is not x,y,z"))),
    }
}

pub async fn get_elements(
    State(state): AppRef,
    Path(id): Path<String>,
    Query(q): Query<ElementsQuery>,
) -> ApiResult<Json<ElementsResponse>> {
    let case = find_case(&state, &id)?;
    let req = PlanRequest {
        target: q.target.as_deref().map(parse_point).transpose()?,
        tilt_x: q.tilt_x.unwrap_or(0.0),
        tilt_y: q.tilt_y.unwrap_or(0.0),
        volume: q.volume.unwrap_or_default(),
    };
    let r = resolve(&case, &req, Stage::Plan)?;
    let radius = state.cfg.pipeline.array.radius_mm;
    let summary = blocking(move || run_plan(&state, &case, r)).await?;
    let array = tfus_core::transducer::build_array(radius, r.target, r.tilt_x, r.tilt_y)
        .map_err(|e| ApiError::from_core(&e, Some(Stage::Plan)))?;
    let sites = array.sites();
    let elements = summary
        .per_element
        .iter()
        .map(|e| ElementOut {
            index: e.element_index,
            position: sites[e.element_index].position,
            active: e.active,
            incident_angle: e.incident_angle,
            skull_thickness: e.skull_thickness,
            sdr: e.sdr_ray,
        })
        .collect();
    Ok(Json(ElementsResponse {
        case_id: id,
        volume: r.volume,
        tilt_x: r.tilt_x,
        tilt_y: r.tilt_y,
        nae: summary.nae,
        elements,
    }))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub target: Option<WorldPoint>,
    #[serde(default)]
    pub volume: VolumeChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub case_id: String,
    pub volume: VolumeChoice,
    pub target: WorldPoint,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub nae: usize,
}

pub async fn post_optimize_tilt(
    State(state): AppRef,
    Path(id): Path<String>,
    Json(req): Json<OptimizeRequest>,
) -> ApiResult<Json<OptimizeResponse>> {
    let case = find_case(&state, &id)?;
    let r = resolve(
        &case,
        &PlanRequest { target: req.target, volume: req.volume, ..Default::default() },
        Stage::Plan,
    )?;
    let best = blocking(move || {
        let vol = case.volume(r.volume).expect("resolved");
        let core = |e: tfus_core::Error| ApiError::from_core(&e, Some(Stage::Plan));
        let ex = case.extracted(r.volume, &state.cfg, vol).map_err(core)?;
        best_pose(&ex.ct_skull, &r.target, &state.cfg.pipeline).map_err(core)
    })
    .await?;
    Ok(Json(OptimizeResponse {
        case_id: id,
        volume: r.volume,
        target: r.target,
        tilt_x: best.tilt_x,
        tilt_y: best.tilt_y,
        nae: best.nae,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub job_id: String,
}

pub async fn post_simulate(
    State(state): AppRef,
    Path(id): Path<String>,
    Json(req): Json<PlanRequest>,
) -> ApiResult<(StatusCode, Json<Submitted>)> {
    let case = find_case(&state, &id)?;
    let r = resolve(&case, &req, Stage::Simulate)?;
    let job = submit(&state, case, r)?;
    Ok((StatusCode::ACCEPTED, Json(Submitted { job_id: job.id.clone() })))
}

pub async fn get_job(State(state): AppRef, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let job = state.job(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    Ok(Json(job.status()))
}

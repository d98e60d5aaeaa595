use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tfus_core::pipeline::simulate_extracted;
use tfus_core::transducer::build_array;
use tfus_core::wavesim::PressureResult;
use tfus_core::{ResultExt, Stage, WorldPoint};

use crate::error::{ApiError, ErrorBody};
use crate::state::{AppState, Case, VolumeChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub max_rms: f64,
    pub argmax: WorldPoint,
    pub focal_shift: f64,
    pub target: WorldPoint,
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub points_per_wavelength: f64,
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub case_id: String,
    pub volume: VolumeChoice,
    pub state: JobState,
    pub progress: f64,
    pub result: Option<SimulationSummary>,
    pub error: Option<ErrorBody>,
}

struct Outcome {
    state: JobState,
    result: Option<SimulationSummary>,
    error: Option<ErrorBody>,
}

pub struct Job {
    pub id: String,
    pub case_id: String,
    pub volume: VolumeChoice,
    outcome: Mutex<Outcome>,
    progress: AtomicU64,
}

impl Job {
    pub fn new(id: String, case_id: String, volume: VolumeChoice) -> Self {
        Job {
            id,
            case_id,
            volume,
            outcome: Mutex::new(Outcome {
                state: JobState::Queued,
                result: None,
                error: None,
            }),
            progress: AtomicU64::new(0f64.to_bits()),
        }
    }

    pub fn status(&self) -> JobStatus {
        let o = self.outcome.lock().unwrap();
        JobStatus {
            job_id: self.id.clone(),
            case_id: self.case_id.clone(),
            volume: self.volume,
            state: o.state,
            progress: f64::from_bits(self.progress.load(Ordering::Relaxed)),
            result: o.result.clone(),
            error: o.error.clone(),
        }
    }

    /// Forward-only transition; a finished job never changes again.
    fn advance(&self, to: JobState, result: Option<SimulationSummary>, error: Option<ErrorBody>) {
        let mut o = self.outcome.lock().unwrap();
        if to <= o.state || matches!(o.state, JobState::Done | JobState::Failed) {
            log::error!("job {}: refused transition {:?} -> {to:?}", self.id, o.state);
            return;
        }
        o.state = to;
        o.result = result;
        o.error = error;
    }

    fn set_progress(&self, p: f64) {
        self.progress.store(p.to_bits(), Ordering::Relaxed);
    }
}

/// Validated parameters of one simulation.
#[derive(Debug, Clone, Copy)]
pub struct SimRequest {
    pub volume: VolumeChoice,
    pub target: WorldPoint,
    pub tilt_x: f64,
    pub tilt_y: f64,
}

/// Queue a simulation behind any other job on the same case.
pub fn submit(state: &Arc<AppState>, case: Arc<Case>, req: SimRequest) -> Result<Arc<Job>, ApiError> {
    let cap = state.cfg.server.queue_capacity;
    let admitted = state
        .pending
        .fetch_update(std::sync::atomic::Ordering::AcqRel, std::sync::atomic::Ordering::Acquire, |n| {
            (n < cap).then_some(n + 1)
        })
        .is_ok();
    if !admitted {
        return Err(ApiError::queue_full(cap));
    }
    let job = Arc::new(Job::new(state.fresh_job_id(), case.id.clone(), req.volume));
    state.jobs.write().unwrap().insert(job.id.clone(), job.clone());

    let (state, task_job) = (state.clone(), job.clone());
    tokio::spawn(async move {
        let guard = case.sim_lock.lock().await;
        task_job.advance(JobState::Running, None, None);
        let (st, j, c) = (state.clone(), task_job.clone(), case.clone());
        let outcome = tokio::task::spawn_blocking(move || run(&st, &c, &j, req)).await;
        drop(guard);
        match outcome {
            Ok(Ok(summary)) => {
                task_job.set_progress(1.0);
                task_job.advance(JobState::Done, Some(summary), None);
            }
            Ok(Err(e)) => task_job.advance(JobState::Failed, None, Some(e.body)),
            Err(join) => task_job.advance(JobState::Failed, None, Some(ApiError::internal(join.to_string()).body)),
        }
        state.pending.fetch_sub(1, std::sync::atomic::Ordering::AcqRel);
    });
    Ok(job)
}

fn run(state: &AppState, case: &Case, job: &Job, req: SimRequest) -> Result<SimulationSummary, ApiError> {
    let cfg = &state.cfg;
    let vol = case
        .volume(req.volume)
        .ok_or_else(|| ApiError::not_available(format!("case {} has no sCT", case.id)))?;
    let core = |e: tfus_core::Error| ApiError::from_core(&e, Some(Stage::Simulate));
    let ex = case.extracted(req.volume, cfg, vol).map_err(core)?;
    let array = build_array(cfg.pipeline.array.radius_mm, req.target, req.tilt_x, req.tilt_y)
        .stage(Stage::Plan)
        .map_err(core)?;
    let progress = |p: f64| job.set_progress(p);
    let r: PressureResult = state
        .sim_pool
        .install(|| simulate_extracted(&ex, &array, &cfg.pipeline, &progress))
        .map_err(core)?;
    let summary = SimulationSummary {
        max_rms: r.max_rms,
        argmax: r.argmax,
        focal_shift: r.focal_shift,
        target: r.target,
        tilt_x: req.tilt_x,
        tilt_y: req.tilt_y,
        points_per_wavelength: r.points_per_wavelength,
        steps: r.steps,
        dt: r.dt,
    };
    case.set_rms(req.volume, Arc::new(r.rms));
    Ok(summary)
}

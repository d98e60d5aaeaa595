use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use lru::LruCache;
use serde::{Deserialize, Serialize};
use tfus_core::config::RunConfig;
use tfus_core::pipeline::{extract, Extracted};
use tfus_core::{Result, Volume, WorldPoint};

use crate::jobs::Job;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VolumeChoice {
    #[default]
    Rct,
    Sct,
}

impl VolumeChoice {
    fn slot(self) -> usize {
        match self {
            VolumeChoice::Rct => 0,
            VolumeChoice::Sct => 1,
        }
    }
}

/// A registered rCT (and optional sCT) held in memory.
pub struct Case {
    pub id: String,
    pub rct: Volume,
    pub sct: Option<Volume>,
    pub target: WorldPoint,
    extracted: [OnceLock<Arc<Extracted>>; 2],
    rms: [RwLock<Option<Arc<Volume>>>; 2],
    /// Held by a running simulation; queued jobs wait here in FIFO order.
    pub sim_lock: tokio::sync::Mutex<()>,
}

impl Case {
    pub fn new(id: String, rct: Volume, sct: Option<Volume>, target: WorldPoint) -> Self {
        Case {
            id,
            rct,
            sct,
            target,
            extracted: Default::default(),
            rms: Default::default(),
            sim_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn volume(&self, choice: VolumeChoice) -> Option<&Volume> {
        match choice {
            VolumeChoice::Rct => Some(&self.rct),
            VolumeChoice::Sct => self.sct.as_ref(),
        }
    }

    /// Skull extraction, computed once per volume.
    pub fn extracted(&self, choice: VolumeChoice, cfg: &RunConfig, vol: &Volume) -> Result<Arc<Extracted>> {
        let slot = &self.extracted[choice.slot()];
        if let Some(e) = slot.get() {
            return Ok(e.clone());
        }
        let e = Arc::new(extract(vol, &cfg.pipeline.skull)?);
        Ok(slot.get_or_init(|| e).clone())
    }

    pub fn rms(&self, choice: VolumeChoice) -> Option<Arc<Volume>> {
        self.rms[choice.slot()].read().unwrap().clone()
    }

    pub fn set_rms(&self, choice: VolumeChoice, v: Arc<Volume>) {
        *self.rms[choice.slot()].write().unwrap() = Some(v);
    }

    pub fn simulated(&self) -> Vec<VolumeChoice> {
        [VolumeChoice::Rct, VolumeChoice::Sct]
            .into_iter()
            .filter(|&c| self.rms(c).is_some())
            .collect()
    }
}

pub struct AppState {
    pub cfg: RunConfig,
    cases: Mutex<LruCache<String, Arc<Case>>>,
    pub jobs: RwLock<HashMap<String, Arc<Job>>>,
    next_job: AtomicU64,
    next_case: AtomicU64,
    /// Queued plus running simulation jobs.
    pub pending: AtomicUsize,
    /// Simulations run here so planning requests on the global pool stay responsive.
    pub sim_pool: rayon::ThreadPool,
}

impl AppState {
    pub fn new(cfg: RunConfig) -> Self {
        let cap = NonZeroUsize::new(cfg.server.max_cases.max(1)).expect("nonzero");
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        AppState {
            cfg,
            cases: Mutex::new(LruCache::new(cap)),
            jobs: RwLock::new(HashMap::new()),
            next_job: AtomicU64::new(1),
            next_case: AtomicU64::new(1),
            pending: AtomicUsize::new(0),
            sim_pool: rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .thread_name(|i| format!("tfus-sim-{i}"))
                .build()
                .expect("simulation thread pool"),
        }
    }

    pub fn case(&self, id: &str) -> Option<Arc<Case>> {
        self.cases.lock().unwrap().get(id).cloned()
    }

    /// Insert or replace a case; the least recently used one is evicted when full.
    pub fn insert_case(&self, case: Case) -> Arc<Case> {
        let case = Arc::new(case);
        if let Some((old, _)) = self.cases.lock().unwrap().push(case.id.clone(), case.clone()) {
            if old != case.id {
                log::info!("evicted case {old}");
            }
        }
        case
    }

    /// Snapshot, most recently used first.
    pub fn list_cases(&self) -> Vec<Arc<Case>> {
        self.cases.lock().unwrap().iter().map(|(_, c)| c.clone()).collect()
    }

    pub fn fresh_case_id(&self) -> String {
        format!("case-{}", self.next_case.fetch_add(1, Ordering::Relaxed))
    }

    pub fn fresh_job_id(&self) -> String {
        format!("job-{}", self.next_job.fetch_add(1, Ordering::Relaxed))
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().unwrap().get(id).cloned()
    }
}

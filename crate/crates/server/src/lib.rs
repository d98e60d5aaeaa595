//! HTTP + JSON planning server.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/cases` | registered cases |
//! | POST | `/cases` | register from volume files or an analytic phantom |
//! | GET  | `/cases/{id}/slice?kind=&axis=&index=&window=&level=&format=` | PNG or raw f32 plane |
//! | POST | `/cases/{id}/plan` | NAE/SDR/ST and the activity vector for a pose |
//! | GET  | `/cases/{id}/elements?tilt_x=&tilt_y=&target=x,y,z&volume=` | per-element detail |
//! | POST | `/cases/{id}/optimize-tilt` | exhaustive tilt search |
//! | POST | `/cases/{id}/simulate` | queue a simulation job |
//! | GET  | `/jobs/{id}` | job state and result |
//!
//! Errors are `{code, stage, message}` with a matching HTTP status.

mod error;
mod handlers;
mod jobs;
mod state;

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tfus_core::config::RunConfig;

pub use error::{ApiError, ErrorBody};
pub use handlers::{
    encode_png, window_level, CaseInfo, ElementOut, ElementsResponse, OptimizeResponse, PlanRequest, PlanResponse,
    Submitted,
};
pub use jobs::{JobState, JobStatus, SimulationSummary};
pub use state::{AppState, VolumeChoice};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/cases", get(handlers::list_cases).post(handlers::register_case))
        .route("/cases/{id}/slice", get(handlers::get_slice))
        .route("/cases/{id}/plan", post(handlers::post_plan))
        .route("/cases/{id}/elements", get(handlers::get_elements))
        .route("/cases/{id}/optimize-tilt", post(handlers::post_optimize_tilt))
        .route("/cases/{id}/simulate", post(handlers::post_simulate))
        .route("/jobs/{id}", get(handlers::get_job))
        .with_state(state)
}

/// Bind `cfg.server.bind` and serve until the process ends.
pub async fn serve(cfg: RunConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&cfg.server.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(cfg)))).await
}

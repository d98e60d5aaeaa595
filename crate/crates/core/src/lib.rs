//! Planning and evaluation toolkit for transcranial focused ultrasound:
//! CT volumes, skull extraction, shell phantoms, hemispherical arrays,
//! ray-based targeting metrics, acoustic property maps, a full-wave solver
//! and paired real/synthetic CT comparison.

pub mod acoustic;
pub mod config;
pub mod error;
pub mod eval;
pub mod filter;
pub mod phantom;
pub mod pipeline;
pub mod ray;
pub mod skull;
pub mod transducer;
pub mod volume;
pub mod wavesim;

pub use error::{Error, ErrorClass, Result, ResultExt, Stage};
pub use volume::{Grid, Unit, Volume, WorldPoint};

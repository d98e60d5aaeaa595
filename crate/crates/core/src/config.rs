//! Run configuration: one JSON document holding every tunable, with
//! `key.path=value` overrides applied before validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::phantom::{PerturbationSpec, ShellPhantomSpec};
use crate::pipeline::{CohortConfig, PipelineConfig};
use crate::volume::WorldPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub shell: ShellPhantomSpec,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Default planning target, mm.
    pub target: WorldPoint,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            shell: ShellPhantomSpec::default(),
            dims: [192, 192, 192],
            spacing_mm: [0.5; 3],
            target: WorldPoint::origin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    /// Cases kept in memory; the least recently used is evicted beyond this.
    pub max_cases: usize,
    /// Pending simulation jobs across all cases.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            max_cases: 4,
            queue_capacity: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub phantom: PhantomConfig,
    pub perturbation: PerturbationSpec,
    pub cohort: CohortConfig,
    pub server: ServerConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.phantom.shell.validate()?;
        if self.phantom.dims.contains(&0) || !self.phantom.spacing_mm.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "phantom grid needs positive dims and spacing, got {:?} / {:?}",
                self.phantom.dims, self.phantom.spacing_mm
            )));
        }
        self.perturbation.validate()?;
        self.cohort.validate()?;
        if self.server.max_cases == 0 || self.server.queue_capacity == 0 {
            return Err(Error::InvalidParameter("server max_cases and queue_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Parse a JSON document, apply overrides and validate.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        Self::from_value(value, overrides)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
            }
            None => serde_json::to_value(RunConfig::default()).expect("defaults serialize"),
        };
        Self::from_value(value, overrides)
    }

    fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reseed every random stream.
    pub fn set_seed(&mut self, seed: u64) {
        self.perturbation.rng_seed = seed;
        self.cohort.seed = seed;
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Apply `a.b.c=value` to a JSON tree. The value is parsed as JSON and taken
/// as a bare string when that fails. Intermediate objects are created.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidParameter(format!("override {spec:?} is not key.path=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::InvalidParameter(format!("override {spec:?} has an empty key")));
    }
    let new: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    for key in path.split('.') {
        if !node.is_object() {
            return Err(Error::InvalidParameter(format!("override {spec:?}: {key:?} is not inside an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(key.to_string())
            .or_insert(Value::Object(Default::default()));
    }
    *node = new;
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tfus_core::config::RunConfig;
use tfus_core::{Error, Result};

#[derive(Debug, Serialize)]
struct FileEntry {
    path: PathBuf,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: String,
    command: &'a str,
    args: Vec<String>,
    config: &'a RunConfig,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn sha256_file(path: &Path) -> Result<FileEntry> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hex = Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileEntry {
        path: path.to_path_buf(),
        bytes: data.len() as u64,
        sha256: hex,
    })
}

/// A `.vol` header names a `.raw` payload next to it; both are recorded.
fn with_payload(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        out.push(p.clone());
        if p.extension().is_some_and(|e| e == "vol") {
            out.push(p.with_extension("raw"));
        }
    }
    out
}

/// Inputs, outputs and the resolved configuration of one run. No timestamps,
/// so identical runs give identical manifests.
pub fn write(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let hash_all = |ps: &[PathBuf]| with_payload(ps).iter().map(|p| sha256_file(p)).collect::<Result<Vec<_>>>();
    let m = Manifest {
        tool: format!("tfus {}", env!("CARGO_PKG_VERSION")),
        command,
        args: std::env::args().skip(1).collect(),
        config: cfg,
        inputs: hash_all(inputs)?,
        outputs: hash_all(outputs)?,
    };
    let path = out_dir.join(format!("manifest-{command}.json"));
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

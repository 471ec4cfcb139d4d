//! `manifest.json` in the work directory: the effective configuration plus
//! one entry per command with input and output checksums.

use std::path::{Path, PathBuf};

use seawatch::io::sha256_file;
use seawatch::{Error, Result};
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default)]
pub struct StageRecord {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn checksums(paths: &[PathBuf]) -> Result<Value> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? }));
    }
    Ok(Value::Array(out))
}

/// Loads the manifest (or starts one), refreshes the config snapshot and
/// replaces the entry for `command`.
pub fn record_stage(cfg: &RunConfig, command: &str, wall_seconds: f64, stage: &StageRecord) -> Result<PathBuf> {
    let path = cfg.work_dir.join(MANIFEST_FILE);
    let mut manifest = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str::<Value>(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => json!({}),
        Err(e) => return Err(Error::io_at(&path, e)),
    };
    let obj = manifest
        .as_object_mut()
        .ok_or_else(|| Error::Data(format!("{}: not a JSON object", path.display())))?;
    let config: Map<String, Value> = cfg
        .pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), Value::String(v)))
        .collect();
    obj.insert("tool".into(), json!("seawatch"));
    obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    obj.insert("config".into(), Value::Object(config));
    let stages = obj
        .entry("stages")
        .or_insert_with(|| json!({}))
        .as_object_mut()
        .ok_or_else(|| Error::Data(format!("{}: `stages` is not an object", path.display())))?;
    stages.insert(
        command.to_string(),
        json!({
            "wall_seconds": wall_seconds,
            "inputs": checksums(&stage.inputs)?,
            "outputs": checksums(&stage.outputs)?,
        }),
    );
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io_at(&path, e))?;
    Ok(path)
}

/// Every recorded output of every stage, with its checksum.
pub fn recorded_outputs(work_dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    let path = work_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    if let Some(stages) = v["stages"].as_object() {
        for stage in stages.values() {
            for o in stage["outputs"].as_array().into_iter().flatten() {
                if let (Some(p), Some(h)) = (o["path"].as_str(), o["sha256"].as_str()) {
                    out.push((PathBuf::from(p), h.to_string()));
                }
            }
        }
    }
    Ok(out)
}

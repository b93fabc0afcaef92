//! Per-command run configurations: JSON file, then flag overrides, then the
//! resolved result echoed next to the outputs.

use std::path::Path;

use anyhow::{Context, Result};
use lka3d_core::inference::WindowSpec;
use lka3d_core::metrics::{Connectivity, Region};
use lka3d_core::network::ModelConfig;
use lka3d_core::pipeline::SyntheticSpec;
use lka3d_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::BadInput;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthRun {
    pub synthetic: SyntheticSpec,
    pub count: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferRun {
    pub window: WindowSpec,
    pub tta: bool,
    pub save_logits: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsRun {
    pub connectivity: Connectivity,
    /// One region per foreground label when absent.
    pub regions: Option<Vec<Region>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountRun {
    pub model: ModelConfig,
    pub input_shape: [usize; 3],
}

impl Default for CountRun {
    fn default() -> Self {
        CountRun { model: ModelConfig { in_channels: 4, ..Default::default() }, input_shape: [128; 3] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErfRun {
    /// Used when no checkpoint is given (random initialization).
    pub model: ModelConfig,
    pub seed: u64,
    /// Number of consecutive initialization seeds, starting at `seed`.
    pub seeds: usize,
    /// 1-based encoder stages; all stages when empty.
    pub stages: Vec<usize>,
    pub threshold: f64,
    /// Synthetic inputs, used when no data directory is given.
    pub synthetic: SyntheticSpec,
    pub subjects: usize,
}

impl Default for ErfRun {
    fn default() -> Self {
        ErfRun {
            model: ModelConfig::default(),
            seed: 0,
            seeds: 1,
            stages: Vec::new(),
            threshold: 0.01,
            synthetic: SyntheticSpec::default(),
            subjects: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurRun {
    pub sigmas: Vec<f64>,
    pub window: WindowSpec,
}

impl Default for BlurRun {
    fn default() -> Self {
        BlurRun { sigmas: vec![0.0, 0.5, 1.0, 2.0], window: WindowSpec::default() }
    }
}

/// Reads `path` (if any) as JSON, applies `overrides` (dotted key, JSON
/// value) and deserializes, rejecting unknown keys.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<T> {
    resolve_over(serde_json::to_value(T::default())?, path, overrides)
}

/// As [`resolve`], with `base` in place of the defaults when no file is given.
pub fn resolve_over<T: DeserializeOwned>(base: Value, path: Option<&Path>, overrides: &[(String, Value)]) -> Result<T> {
    let mut v = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| BadInput(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| BadInput(format!("config {} is not valid JSON: {e}", p.display())))?
        }
        None => base,
    };
    for (key, val) in overrides {
        set_path(&mut v, key, val.clone())?;
    }
    Ok(serde_json::from_value(v).map_err(|e| BadInput(format!("invalid configuration: {e}")))?)
}

fn set_path(root: &mut Value, key: &str, val: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| BadInput(format!("cannot set {key}: parent is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), val);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses a `--set key=value` pair; values that are not JSON are taken as
/// strings.
pub fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Collects set flag values as overrides.
#[derive(Default)]
pub struct Overrides(pub Vec<(String, Value)>);

impl Overrides {
    pub fn opt<T: Serialize>(&mut self, key: &str, v: &Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_string(), serde_json::to_value(v).expect("serializable flag")));
        }
        self
    }

    pub fn extend(&mut self, sets: &[(String, Value)]) -> &mut Self {
        self.0.extend(sets.iter().cloned());
        self
    }
}

/// Writes `{command, inputs, config}` as `resolved_config.json` in `dir`.
pub fn write_resolved(dir: &Path, command: &str, inputs: Value, config: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BadInput(format!("cannot create {}: {e}", dir.display())))?;
    let doc = serde_json::json!({ "command": command, "inputs": inputs, "config": config });
    let path = dir.join("resolved_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", path.display()))
}

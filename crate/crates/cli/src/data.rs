//! Dataset layout on disk: `case_NNNN_img.rvf` / `case_NNNN_lbl.rvf` pairs
//! plus an optional `manifest.json`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use lka3d_core::pipeline::io::read_volume;
use lka3d_core::pipeline::{prepare_input, Volume};
use lka3d_core::training::Case;
use serde::{Deserialize, Serialize};

use crate::BadInput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub labels: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub cases: Vec<ManifestEntry>,
    #[serde(default)]
    pub synthetic: Option<serde_json::Value>,
}

const VOLUME_EXTS: [&str; 2] = [".rvf", ".nii"];

fn strip_ext(name: &str) -> Option<&str> {
    VOLUME_EXTS.iter().find_map(|e| name.strip_suffix(e))
}

/// Case id of a volume file: the name without extension and without a
/// trailing `_img`, `_lbl`, `_pred` or `_seg`.
pub fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let stem = strip_ext(name)?;
    let id = ["_img", "_lbl", "_pred", "_seg"].iter().find_map(|s| stem.strip_suffix(s)).unwrap_or(stem);
    Some(id.to_string())
}

fn volume_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| BadInput(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).and_then(strip_ext).is_some())
        .collect();
    files.sort();
    Ok(files)
}

fn has_suffix(p: &Path, suffix: &str) -> bool {
    p.file_name().and_then(|n| n.to_str()).and_then(strip_ext).is_some_and(|s| s.ends_with(suffix))
}

/// Entries of a dataset directory, from its manifest when present.
pub fn list_cases(dir: &Path) -> Result<Vec<ManifestEntry>> {
    if !dir.is_dir() {
        return Err(BadInput(format!("dataset directory {} does not exist", dir.display())).into());
    }
    let manifest = dir.join("manifest.json");
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| BadInput(format!("bad manifest {}: {e}", manifest.display())))?;
        return Ok(m.cases);
    }
    let files = volume_files(dir)?;
    let mut out = Vec::new();
    for img in files.iter().filter(|p| has_suffix(p, "_img")) {
        let id = case_id(img).expect("volume file");
        let lbl = files.iter().find(|p| has_suffix(p, "_lbl") && case_id(p).as_deref() == Some(&id));
        out.push(ManifestEntry {
            id,
            image: img.file_name().unwrap().to_string_lossy().into_owned(),
            labels: lbl.map(|p| p.file_name().unwrap().to_string_lossy().into_owned()),
        });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Volume> {
    Ok(read_volume(path)?)
}

/// Loads every labelled case of `dir` as model input plus labels.
pub fn load_training_cases(dir: &Path) -> Result<Vec<(String, Case)>> {
    let entries = list_cases(dir)?;
    let mut out = Vec::new();
    for e in entries {
        let Some(lbl) = &e.labels else { continue };
        let image = read(&dir.join(&e.image))?;
        let labels = read(&dir.join(lbl))?;
        if labels.shape != image.shape || labels.channels != 1 {
            return Err(BadInput(format!("case {}: labels {:?}×{} do not match image {:?}", e.id, labels.shape, labels.channels, image.shape)).into());
        }
        out.push((e.id, Case { image: prepare_input(&image), labels }));
    }
    if out.is_empty() {
        return Err(BadInput(format!("no labelled cases found in {}", dir.display())).into());
    }
    Ok(out)
}

/// Raw images named by `inputs`: files as given, directories expanded to
/// their `_img` volumes (or every volume when none is so named).
pub fn collect_images(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let files = volume_files(p)?;
            let imgs: Vec<&PathBuf> = files.iter().filter(|f| has_suffix(f, "_img")).collect();
            let chosen: Vec<&PathBuf> = if imgs.is_empty() { files.iter().collect() } else { imgs };
            out.extend(chosen.into_iter().map(|f| (case_id(f).expect("volume file"), f.clone())));
        } else if p.is_file() {
            let id = case_id(p).ok_or_else(|| BadInput(format!("{} is not a volume file", p.display())))?;
            out.push((id, p.clone()));
        } else {
            return Err(BadInput(format!("input {} does not exist", p.display())).into());
        }
    }
    if out.is_empty() {
        return Err(BadInput("no input volumes found".into()).into());
    }
    Ok(out)
}

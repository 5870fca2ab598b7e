//! Annotations, manifests, fold splits, run configuration and
//! weight files on disk.

mod annotation;
mod config;
mod folds;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use annotation::{format_annotations, parse_annotation, Annotation};
pub use config::{parse_resolution, DetectConfig, RunConfig};
pub use folds::{make_folds, FoldItem, FoldSplit};
pub use manifest::{default_class_names, DatasetManifest, LoadedSample, ManifestEntry};

use crate::error::{Error, Result};
use crate::model::{Init, Model, ModelConfig, WeightStore};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_weights(path: &Path, store: &WeightStore<f32>) -> Result<()> {
    write_atomic(path, &store.to_bytes()?)
}

pub fn read_weights(path: &Path) -> Result<WeightStore<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightStore::from_bytes(&bytes)
}

/// `weights.ltvw` → `weights.ltvw.cfg`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes the weights and a sidecar with the full run configuration.
pub fn save_checkpoint(path: &Path, model: &Model<f32>, cfg: &RunConfig) -> Result<()> {
    write_weights(path, model.weights())?;
    write_atomic(&sidecar_path(path), cfg.to_text().as_bytes())
}

/// Loads weights, taking the architecture from the sidecar when present and
/// from `fallback` otherwise.
pub fn load_checkpoint(path: &Path, fallback: &ModelConfig) -> Result<(Model<f32>, Option<RunConfig>)> {
    let store = read_weights(path)?;
    let side = sidecar_path(path);
    let run = if side.is_file() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Some(RunConfig::parse(&text)?)
    } else {
        None
    };
    let cfg = run.as_ref().map_or_else(|| fallback.clone(), |r| r.model.clone());
    Ok((Model::build(cfg, Init::FromWeights(store))?, run))
}

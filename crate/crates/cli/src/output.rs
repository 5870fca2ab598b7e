//! Output directories, `run.txt` and detection CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ltv_core::data::{write_atomic, RunConfig};
use ltv_core::geometry::BBox;
use ltv_core::postprocess::Detection;
use ltv_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::Common;

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!("{} exists and is not a directory", dir.display())));
        }
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn require_out(common: &Common) -> Result<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    prepare_out(&out, common.force)?;
    Ok(out)
}

/// Config file, then `--set` overrides, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    base.with_overrides(&overrides)
}

/// Writes `run.txt`: the resolved config plus command arguments, one
/// sorted `key = value` line each.
pub fn write_run(dir: &Path, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut lines: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    lines.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    lines.sort();
    let text: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write_atomic(&dir.join("run.txt"), text.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub const DETECTION_HEADER: &str = "class_id,score,x1,y1,x2,y2,level";

pub fn detections_csv(dets: &[Detection]) -> String {
    let mut s = format!("{DETECTION_HEADER}\n");
    for d in dets {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            d.class_id, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.level
        );
    }
    s
}

pub fn parse_detections_csv(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let located = |line: usize, msg: String| Error::Parse {
        line,
        msg: format!("{}: {msg}", path.display()),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DETECTION_HEADER => {}
        _ => return Err(located(1, format!("expected header `{DETECTION_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(located(i + 1, format!("expected 7 fields, got {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].trim()
                .parse()
                .map_err(|_| located(i + 1, format!("`{}` is not a number", f[k])))
        };
        let int = |k: usize| -> Result<usize> {
            f[k].trim()
                .parse()
                .map_err(|_| located(i + 1, format!("`{}` is not an index", f[k])))
        };
        let bbox = BBox::new(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|e| located(i + 1, e.to_string()))?;
        out.push(Detection {
            bbox,
            score: num(1)?,
            class_id: int(0)?,
            level: int(6)?,
        });
    }
    Ok(out)
}

pub fn fmt_res(r: (usize, usize)) -> String {
    format!("{}x{}", r.0, r.1)
}

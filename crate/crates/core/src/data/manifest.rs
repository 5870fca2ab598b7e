//! Tab-separated dataset manifests:
//! `image_path<TAB>annotation_path<TAB>tag,tag,...`, paths relative to the
//! manifest's directory.

use std::path::{Path, PathBuf};

use super::annotation::parse_annotation;
use crate::error::{Error, Result};
use crate::imaging::{read_frame, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: PathBuf,
    pub tags: Vec<String>,
}

impl ManifestEntry {
    /// File stem of the image.
    pub fn image_id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

/// A loaded manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub id: String,
    pub sample: Sample,
    pub tags: Vec<String>,
}

pub fn default_class_names() -> Vec<String> {
    vec!["child".into(), "adult".into()]
}

impl DatasetManifest {
    /// Parses manifest text; does not touch the file system.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
                });
            }
            if cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: "empty path".into(),
                });
            }
            let tags = cols
                .get(2)
                .map(|t| t.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
                .unwrap_or_default();
            entries.push(ManifestEntry {
                image: PathBuf::from(cols[0].trim()),
                annotation: PathBuf::from(cols[1].trim()),
                tags,
            });
        }
        let mut ids: Vec<String> = entries.iter().map(ManifestEntry::image_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("image id `{}` appears more than once", w[0])));
        }
        Ok(Self {
            root: root.into(),
            entries,
            class_names: default_class_names(),
        })
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for e in &m.entries {
            for p in [&e.image, &e.annotation] {
                let full = m.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("manifest references missing file {}", full.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.image.display(), e.annotation.display(), e.tags.join(",")))
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(ManifestEntry::image_id).collect()
    }

    /// Reads every frame and its annotation.
    pub fn load_samples(&self) -> Result<Vec<LoadedSample>> {
        self.entries.iter().map(|e| self.load_entry(e)).collect()
    }

    pub fn load_entry(&self, e: &ManifestEntry) -> Result<LoadedSample> {
        let frame = read_frame(&self.resolve(&e.image))?;
        let ann_path = self.resolve(&e.annotation);
        let text = std::fs::read_to_string(&ann_path).map_err(|err| Error::io(&ann_path, err))?;
        let anns = parse_annotation(&text, self.class_names.len()).map_err(|err| match err {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", ann_path.display()),
            },
            other => other,
        })?;
        let boxes = anns.iter().map(|a| a.to_labeled(frame.width, frame.height)).collect();
        Ok(LoadedSample {
            id: e.image_id(),
            sample: Sample::new(frame, boxes),
            tags: e.tags.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_manifest_lines() {
        let m = DatasetManifest::parse("a.pgm\ta.txt\thot-bg,night\n# c\nb.pgm\tb.txt\n", "/d").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert!(m.entries[0].has_tag("hot-bg"));
        assert!(m.entries[1].tags.is_empty());
        assert_eq!(m.ids(), vec!["a", "b"]);
        assert!(matches!(DatasetManifest::parse("a.pgm", "/"), Err(Error::Parse { line: 1, .. })));
        assert!(DatasetManifest::parse("a.pgm\tx\nd/a.pgm\ty\n", "/").is_err());
    }
}

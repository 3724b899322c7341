//! `manifest.json`: the per-dataset index of images, quality labels,
//! annotation masks and model predictions.
//!
//! Relative paths inside the manifest resolve against the manifest's
//! directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::mask::{self, Annotation, LesionMask, LesionType, MaskError};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {image_id:?} references missing file {path}")]
    MissingPath { image_id: String, path: PathBuf },
    #[error("image {image_id:?}: {source}")]
    Annotation {
        image_id: String,
        #[source]
        source: MaskError,
    },
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    Good,
    Bad,
}

impl QualityLabel {
    pub fn is_good(self) -> bool {
        self == QualityLabel::Good
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::Good => "good",
            QualityLabel::Bad => "bad",
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Ok(QualityLabel::Good),
            "bad" => Ok(QualityLabel::Bad),
            other => Err(format!("unknown quality label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub path: String,
    pub annotator: String,
    pub lesion: LesionType,
    #[serde(deserialize_with = "confidence_value")]
    pub confidence: f64,
    #[serde(deserialize_with = "expertise_value")]
    pub expertise: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightValue {
    Number(f64),
    Label(String),
}

fn confidence_value<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match WeightValue::deserialize(d)? {
        WeightValue::Number(v) => Ok(v),
        WeightValue::Label(l) => mask::confidence_band(&l)
            .map(|b| b.midpoint())
            .map_err(serde::de::Error::custom),
    }
}

fn expertise_value<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match WeightValue::deserialize(d)? {
        WeightValue::Number(v) => Ok(v),
        WeightValue::Label(l) => mask::expertise_band(&l)
            .map(|b| b.midpoint())
            .map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    #[serde(default)]
    pub quality: Option<QualityLabel>,
    #[serde(default)]
    pub vlm_scores: Option<String>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default)]
    pub predictions: BTreeMap<LesionType, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ManifestEntry>,
}

/// A validated manifest together with the directory its paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    manifest: Manifest,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let ds = DatasetManifest { root, manifest };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a manifest in memory; validation still applies.
    pub fn from_parts(root: impl Into<PathBuf>, manifest: Manifest) -> Result<Self, ManifestError> {
        let ds = DatasetManifest {
            root: root.into(),
            manifest,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for e in &self.manifest.images {
            if !seen.insert(e.id.as_str()) {
                return Err(ManifestError::DuplicateId(e.id.clone()));
            }
            let mut paths: Vec<&str> = vec![e.path.as_str()];
            paths.extend(e.vlm_scores.as_deref());
            paths.extend(e.annotations.iter().map(|a| a.path.as_str()));
            paths.extend(e.predictions.values().map(String::as_str));
            for p in paths {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(ManifestError::MissingPath {
                        image_id: e.id.clone(),
                        path: full,
                    });
                }
            }
            for a in &e.annotations {
                mask::check_unit("confidence", a.confidence)
                    .and_then(|_| mask::check_unit("expertise", a.expertise))
                    .map_err(|source| ManifestError::Annotation {
                        image_id: e.id.clone(),
                        source,
                    })?;
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.manifest.images
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.manifest.images.iter().find(|e| e.id == id)
    }

    pub fn entry_mut(&mut self, id: &str) -> Option<&mut ManifestEntry> {
        self.manifest.images.iter_mut().find(|e| e.id == id)
    }

    /// Entries ordered by image id.
    pub fn sorted_entries(&self) -> Vec<&ManifestEntry> {
        let mut v: Vec<_> = self.manifest.images.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolve(&entry.path)
    }

    /// Loads every annotation mask of one image.
    pub fn load_annotations(&self, image_id: &str) -> Result<Vec<Annotation>, ManifestError> {
        let entry = self
            .entry(image_id)
            .ok_or_else(|| ManifestError::UnknownImage(image_id.to_string()))?;
        entry
            .annotations
            .iter()
            .map(|rec| {
                let grid = io::load_mask(self.resolve(&rec.path))?;
                Annotation::new(
                    rec.annotator.clone(),
                    entry.id.clone(),
                    LesionMask {
                        lesion: rec.lesion,
                        grid,
                    },
                    rec.confidence,
                    rec.expertise,
                )
                .map_err(|source| ManifestError::Annotation {
                    image_id: entry.id.clone(),
                    source,
                })
            })
            .collect()
    }

    pub fn into_manifest(self) -> Manifest {
        self.manifest
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        save_manifest(&self.manifest, path.as_ref())
    }
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

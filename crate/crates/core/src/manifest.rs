//! Dataset manifest: the JSON interchange format shared by every stage.
//!
//! ```json
//! {"images":[{"file":"img_0000.png","width":512,"height":512,
//!   "boxes":[{"x":10,"y":20,"w":30,"h":4,"class":0}]}],
//!  "classes":["scratch","irregular_hole"]}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

pub const CLASS_NAMES: [&str; 2] = ["scratch", "irregular_hole"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing manifest {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxEntry {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: usize,
}

impl BoxEntry {
    pub fn bbox(&self) -> BBox<f64> {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn from_bbox(b: &BBox<f64>, class: usize) -> Self {
        Self { x: b.x, y: b.y, w: b.w, h: b.h, class }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BoxEntry>,
    /// `"original"` or `"consingan"` once a dataset went through augmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: Vec<ImageEntry>,
    pub classes: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { images: Vec::new(), classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect() }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Parse { path: path.into(), source })
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = self.to_json();
        fs::write(path, text).map_err(|source| ManifestError::Io { path: path.into(), source })
    }

    /// Pretty JSON with a trailing newline; stable for byte comparisons.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn num_boxes(&self) -> usize {
        self.images.iter().map(|e| e.boxes.len()).sum()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for b in self.images.iter().flat_map(|e| &e.boxes) {
            if b.class < counts.len() {
                counts[b.class] += 1;
            }
        }
        counts
    }
}

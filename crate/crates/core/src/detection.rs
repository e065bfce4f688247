//! Detections and labeled boxes as exchanged between the detector and the
//! evaluator, plus the predictions JSON-lines format:
//!
//! ```text
//! {"file":"img_00003.png","detections":[{"x":1.0,"y":2.0,"w":3.0,"h":4.0,"class":0,"conf":0.9}],"ms":12.5}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::manifest::{BoxEntry, ImageEntry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: usize,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox<f64>, class: usize, confidence: f64) -> Self {
        Self { x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h, class, confidence }
    }

    pub fn bbox(&self) -> BBox<f64> {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledBox {
    pub bbox: BBox<f64>,
    pub class: usize,
}

impl From<&BoxEntry> for LabeledBox {
    fn from(b: &BoxEntry) -> Self {
        Self { bbox: b.bbox(), class: b.class }
    }
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePredictions {
    pub file: String,
    pub detections: Vec<Detection>,
    /// Wall time for this image, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
}

pub fn write_predictions(mut w: impl Write, preds: &[ImagePredictions]) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions(r: impl BufRead) -> Result<Vec<ImagePredictions>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

pub fn ground_truth(entry: &ImageEntry) -> Vec<LabeledBox> {
    entry.boxes.iter().map(LabeledBox::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            ImagePredictions { file: "a.png".into(), detections: vec![Detection::new(BBox::new(1.0, 2.0, 3.0, 4.0), 1, 0.5)], ms: Some(3.0) },
            ImagePredictions { file: "b.png".into(), detections: vec![], ms: None },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        assert_eq!(read_predictions(&buf[..]).unwrap(), preds);
        assert!(read_predictions(&b"{\"file\":1}\n"[..]).unwrap_err().starts_with("line 1"));
    }
}

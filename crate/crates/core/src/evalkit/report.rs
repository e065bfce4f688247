use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    confusion_counts, f1_from, image_level_counts, mean_average_precision, precision, recall, ConfusionCounts, EvalError,
    EvalImage,
};
use crate::detection::{ground_truth, ImagePredictions};
use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub num_classes: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { conf_threshold: 0.25, iou_threshold: 0.5, num_classes: 2 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub map50: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub image_level: ConfusionCounts,
    /// Mean per-image detection time.
    pub detection_time_ms: Option<f64>,
    pub dataset: Option<DatasetSizes>,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
}

/// Joins predictions to the manifest by file name; images without predictions count as empty.
pub fn evaluate(
    model: &str,
    manifest: &Manifest,
    predictions: &[ImagePredictions],
    opts: &ReportOptions,
) -> Result<EvalReport, EvalError> {
    let mut by_file: HashMap<&str, &ImagePredictions> = HashMap::new();
    for p in predictions {
        by_file.insert(&p.file, p);
    }
    for p in predictions {
        if !manifest.images.iter().any(|e| e.file == p.file) {
            return Err(EvalError::UnknownImage(p.file.clone()));
        }
    }
    let images: Vec<EvalImage> = manifest
        .images
        .iter()
        .map(|e| EvalImage {
            file: e.file.clone(),
            detections: by_file.get(e.file.as_str()).map(|p| p.detections.clone()).unwrap_or_default(),
            ground_truth: ground_truth(e),
        })
        .collect();
    let map = mean_average_precision(&images, opts.num_classes, opts.iou_threshold)?;
    let counts = confusion_counts(&images, opts.conf_threshold, opts.iou_threshold);
    let (p, r) = (precision(&counts), recall(&counts));
    Ok(EvalReport {
        model: model.to_string(),
        map50: map.map,
        per_class_ap: map.per_class,
        precision: p,
        recall: r,
        f1: f1_from(p, r),
        counts,
        image_level: image_level_counts(&images, opts.conf_threshold),
        detection_time_ms: None,
        dataset: None,
        conf_threshold: opts.conf_threshold,
        iou_threshold: opts.iou_threshold,
    })
}

pub const TABLE_HEADER: &str = "| Model | mAP0.5 | PRE | REC | F1 | Detection time |";

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

/// `mAP | PRE | REC | F1 | time` cells, e.g. `91.3% | 98.8% | 85.7% | 91.0% | 146 ms`.
pub fn format_row(r: &EvalReport) -> String {
    let time = r.detection_time_ms.map_or("n/a".to_string(), |t| format!("{t:.0} ms"));
    format!("{} | {} | {} | {} | {}", pct(r.map50), pct(r.precision), pct(r.recall), pct(r.f1), time)
}

pub fn render_table(rows: &[EvalReport]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push_str("\n|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!("| {} | {} |\n", r.model, format_row(r)));
    }
    out
}

//! Detection evaluation: greedy IoU matching, confusion counts, precision /
//! recall / F1, all-point average precision and mAP at IoU 0.5.

mod report;
mod split;

pub use report::{evaluate, format_row, render_table, EvalReport, ReportOptions, DatasetSizes, TABLE_HEADER};
pub use split::{split_dataset, Split, SplitSpec};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::bbox::iou;
use crate::detection::{Detection, LabeledBox};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth boxes in any class; mAP is undefined")]
    NoGroundTruth,
    #[error("split needs at least 3 items, got {0}")]
    TooFewItems(usize),
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    BadFractions([f64; 3]),
    #[error("predictions reference unknown image `{0}`")]
    UnknownImage(String),
}

/// Detections and ground truth for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImage {
    pub file: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<LabeledBox>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Only meaningful in image-level mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tn: Option<usize>,
}

impl ConfusionCounts {
    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        if let Some(t) = other.tn {
            self.tn = Some(self.tn.unwrap_or(0) + t);
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn f1_from(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f1(c: &ConfusionCounts) -> f64 {
    f1_from(precision(c), recall(c))
}

/// Descending confidence, then ascending box coordinates and class.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then(a.class.cmp(&b.class))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub det_tp: Vec<bool>,
    /// Index of the ground-truth box each detection claimed.
    pub det_gt: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn counts(&self) -> ConfusionCounts {
        let tp = self.det_tp.iter().filter(|&&t| t).count();
        ConfusionCounts {
            tp,
            fp: self.det_tp.len() - tp,
            fn_: self.gt_matched.iter().filter(|&&m| !m).count(),
            tn: None,
        }
    }
}

/// Greedy matching in descending confidence. Each detection takes the unmatched
/// same-class ground truth with the highest IoU, provided it reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[LabeledBox], iou_thresh: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| detection_order(&dets[i], &dets[j]).then(i.cmp(&j)));
    let mut det_tp = vec![false; dets.len()];
    let mut det_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        let d = &dets[i];
        let db = d.bbox();
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || g.class != d.class {
                continue;
            }
            let v = iou(&db, &g.bbox);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            det_tp[i] = true;
            det_gt[i] = Some(j);
        }
    }
    MatchResult { det_tp, det_gt, gt_matched }
}

/// Detection-level counts over all images, keeping detections with confidence ≥ `conf_thresh`.
pub fn confusion_counts(images: &[EvalImage], conf_thresh: f64, iou_thresh: f64) -> ConfusionCounts {
    let mut total = ConfusionCounts::default();
    for img in images {
        let kept: Vec<Detection> = img.detections.iter().filter(|d| d.confidence >= conf_thresh).copied().collect();
        total.add(&match_detections(&kept, &img.ground_truth, iou_thresh).counts());
    }
    total
}

/// Image-level counts: an image is flagged when any detection reaches
/// `conf_thresh`, and is defective when it has any ground truth.
pub fn image_level_counts(images: &[EvalImage], conf_thresh: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts { tn: Some(0), ..Default::default() };
    for img in images {
        let flagged = img.detections.iter().any(|d| d.confidence >= conf_thresh);
        let defective = !img.ground_truth.is_empty();
        match (flagged, defective) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => *c.tn.as_mut().unwrap() += 1,
        }
    }
    c
}

/// All-point interpolated AP for one class: `sum (R_k - R_{k-1}) * max_{k' >= k} P_{k'}`.
/// `None` when the class has no ground truth.
pub fn average_precision(images: &[EvalImage], class: usize, iou_thresh: f64) -> Option<f64> {
    let n_gt: usize = images.iter().map(|im| im.ground_truth.iter().filter(|g| g.class == class).count()).sum();
    if n_gt == 0 {
        return None;
    }
    // (detection, file, tp)
    let mut pooled: Vec<(Detection, &str, bool)> = Vec::new();
    for img in images {
        let result = match_detections(&img.detections, &img.ground_truth, iou_thresh);
        for (d, tp) in img.detections.iter().zip(result.det_tp) {
            if d.class == class {
                pooled.push((*d, &img.file, tp));
            }
        }
    }
    pooled.sort_by(|a, b| {
        b.0.confidence.total_cmp(&a.0.confidence).then(a.1.cmp(b.1)).then(detection_order(&a.0, &b.0))
    });
    let mut precisions = Vec::with_capacity(pooled.len());
    let mut recalls = Vec::with_capacity(pooled.len());
    let mut tp = 0usize;
    for (k, (_, _, is_tp)) in pooled.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (k + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    for k in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[k] = precisions[k].max(precisions[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
}

/// Mean of the defined per-class APs at the given IoU threshold.
pub fn mean_average_precision(images: &[EvalImage], num_classes: usize, iou_thresh: f64) -> Result<MapResult, EvalError> {
    let per_class: Vec<Option<f64>> = (0..num_classes).map(|c| average_precision(images, c, iou_thresh)).collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(MapResult { map: defined.iter().sum::<f64>() / defined.len() as f64, per_class })
}

pub fn map_at_05(images: &[EvalImage], num_classes: usize) -> Result<MapResult, EvalError> {
    mean_average_precision(images, num_classes, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;

    fn det(x: f64, class: usize, conf: f64) -> Detection {
        Detection::new(BBox::new(x, 0.0, 10.0, 10.0), class, conf)
    }

    #[test]
    fn counts_formulas() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 3, tn: None };
        assert_eq!(precision(&c), 0.75);
        assert_eq!(recall(&c), 0.5);
        assert!((f1(&c) - 0.6).abs() < 1e-15);
        assert_eq!(f1(&ConfusionCounts::default()), 0.0);
    }

    #[test]
    fn matching_examples() {
        let gt = [LabeledBox { bbox: BBox::new(0.0, 0.0, 10.0, 10.0), class: 0 }];
        // x offset 2.5 gives IoU 7.5 / 12.5 = 0.6
        let r = match_detections(&[det(2.5, 0, 0.9)], &gt, 0.5);
        assert_eq!(r.counts(), ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: None });
        let r = match_detections(&[det(0.5, 0, 0.9), det(1.0, 0, 0.8)], &gt, 0.5);
        assert_eq!((r.counts().tp, r.counts().fp), (1, 1));
        assert_eq!(r.det_tp, vec![true, false]);
        let r = match_detections(&[det(0.0, 1, 0.9)], &gt, 0.5);
        assert_eq!(r.counts(), ConfusionCounts { tp: 0, fp: 1, fn_: 1, tn: None });
    }

    #[test]
    fn ap_examples() {
        let gts = vec![
            LabeledBox { bbox: BBox::new(0.0, 0.0, 10.0, 10.0), class: 0 },
            LabeledBox { bbox: BBox::new(50.0, 0.0, 10.0, 10.0), class: 0 },
        ];
        let img = |detections| EvalImage { file: "a".into(), detections, ground_truth: gts.clone() };
        let ap = average_precision(&[img(vec![det(0.0, 0, 0.9), det(25.0, 0, 0.8), det(50.0, 0, 0.7)])], 0, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[img(vec![det(25.0, 0, 0.9)])], 0, 0.5), Some(0.0));
        assert_eq!(average_precision(&[img(vec![])], 1, 0.5), None);
        let one = EvalImage { file: "b".into(), detections: vec![det(0.0, 0, 0.3)], ground_truth: vec![gts[0]] };
        assert_eq!(average_precision(&[one], 0, 0.5), Some(1.0));
    }

    #[test]
    fn map_needs_ground_truth() {
        let img = EvalImage { file: "a".into(), detections: vec![det(0.0, 0, 0.5)], ground_truth: vec![] };
        assert_eq!(map_at_05(&[img], 2), Err(EvalError::NoGroundTruth));
    }

    #[test]
    fn image_level_mode() {
        let gt = vec![LabeledBox { bbox: BBox::new(0.0, 0.0, 5.0, 5.0), class: 0 }];
        let images = [
            EvalImage { file: "a".into(), detections: vec![det(0.0, 0, 0.9)], ground_truth: gt.clone() },
            EvalImage { file: "b".into(), detections: vec![], ground_truth: gt },
            EvalImage { file: "c".into(), detections: vec![det(0.0, 0, 0.1)], ground_truth: vec![] },
            EvalImage { file: "d".into(), detections: vec![det(0.0, 0, 0.9)], ground_truth: vec![] },
        ];
        assert_eq!(image_level_counts(&images, 0.25), ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: Some(1) });
    }
}

use std::collections::BTreeMap;

use super::AnchorSet;
use crate::bbox::{iou, BBox};
use crate::detection::{Detection, LabeledBox};
use crate::evalkit::detection_order;
use crate::ndgrad::Tensor;
use crate::scalar::Scalar;

/// Log-space size targets and decoded sizes are limited to `exp(±TW_CLAMP)` times the anchor.
pub const TW_CLAMP: f64 = 4.0;

/// One responsible `(scale, image, anchor, cell)` and what it should predict.
#[derive(Clone, Debug, PartialEq)]
pub struct Positive {
    pub scale: usize,
    pub image: usize,
    pub anchor: usize,
    pub gy: usize,
    pub gx: usize,
    /// Centre offset inside the cell, in `[0, 1)`; the target for `sigmoid(t_x)`.
    pub off_x: f64,
    pub off_y: f64,
    /// `ln(w / anchor_w)`; the target for `t_w`.
    pub tw: f64,
    pub th: f64,
    pub class: usize,
    /// Ground-truth box in input pixels.
    pub bbox: BBox<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub positives: Vec<Positive>,
    pub grid_sizes: Vec<usize>,
    pub num_images: usize,
    /// Boxes that landed on an already assigned slot and replaced it.
    pub collisions: usize,
}

/// Each box goes to the anchor with the best shape IoU (over all scales) at the
/// cell containing its centre. When two boxes claim one slot, the later one wins.
pub fn assign_targets(gts: &[Vec<LabeledBox>], anchors: &AnchorSet, input_size: usize) -> Targets {
    let grid_sizes: Vec<usize> = anchors.strides.iter().map(|s| input_size / s).collect();
    let mut slots: BTreeMap<(usize, usize, usize, usize, usize), Positive> = BTreeMap::new();
    let mut collisions = 0;
    for (n, boxes) in gts.iter().enumerate() {
        for b in boxes {
            let (w, h) = (b.bbox.w, b.bbox.h);
            if !(w > 0.0 && h > 0.0) {
                continue;
            }
            let (s, a) = anchors.best_match(w, h);
            let stride = anchors.strides[s] as f64;
            let (cx, cy) = b.bbox.center();
            let side = grid_sizes[s];
            let gx = ((cx / stride).floor().max(0.0) as usize).min(side - 1);
            let gy = ((cy / stride).floor().max(0.0) as usize).min(side - 1);
            let (aw, ah) = anchors.anchors[s][a];
            let p = Positive {
                scale: s,
                image: n,
                anchor: a,
                gy,
                gx,
                off_x: cx / stride - gx as f64,
                off_y: cy / stride - gy as f64,
                tw: (w / aw).ln().clamp(-TW_CLAMP, TW_CLAMP),
                th: (h / ah).ln().clamp(-TW_CLAMP, TW_CLAMP),
                class: b.class,
                bbox: b.bbox,
            };
            if slots.insert((s, n, a, gy, gx), p).is_some() {
                collisions += 1;
            }
        }
    }
    Targets { positives: slots.into_values().collect(), grid_sizes, num_images: gts.len(), collisions }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turns raw head outputs into boxes in input pixels, one list per image, keeping
/// those with `sigmoid(obj) * max_c sigmoid(cls_c) >= conf_threshold`.
pub fn decode<T: Scalar>(
    preds: &[Tensor<T>],
    anchors: &AnchorSet,
    input_size: usize,
    num_classes: usize,
    conf_threshold: f64,
) -> Vec<Vec<Detection>> {
    let n = preds.first().map_or(0, |p| p.shape()[0]);
    let per = 5 + num_classes;
    let limit = input_size as f64;
    let mut out = vec![Vec::new(); n];
    for (s, p) in preds.iter().enumerate() {
        let stride = anchors.strides[s] as f64;
        let side = p.shape()[2];
        let ch = p.shape()[1];
        let data = p.data();
        let at = |img: usize, c: usize, y: usize, x: usize| data[((img * ch + c) * side + y) * side + x].to_f64_lossy();
        for (img, dets) in out.iter_mut().enumerate() {
            for (a, &(aw, ah)) in anchors.anchors[s].iter().enumerate() {
                let base = a * per;
                for y in 0..side {
                    for x in 0..side {
                        let obj = sigmoid(at(img, base + 4, y, x));
                        let (mut best_c, mut best_p) = (0, f64::MIN);
                        for c in 0..num_classes {
                            let pc = sigmoid(at(img, base + 5 + c, y, x));
                            if pc > best_p {
                                best_c = c;
                                best_p = pc;
                            }
                        }
                        let conf = obj * best_p;
                        if !(conf >= conf_threshold) {
                            continue;
                        }
                        let cx = (sigmoid(at(img, base, y, x)) + x as f64) * stride;
                        let cy = (sigmoid(at(img, base + 1, y, x)) + y as f64) * stride;
                        let w = aw * at(img, base + 2, y, x).clamp(-TW_CLAMP, TW_CLAMP).exp();
                        let h = ah * at(img, base + 3, y, x).clamp(-TW_CLAMP, TW_CLAMP).exp();
                        let b = BBox::from_center(cx, cy, w, h).clamp_to(limit, limit);
                        dets.push(Detection::new(b, best_c, conf));
                    }
                }
            }
        }
    }
    out
}

/// Greedy per-class suppression in [`detection_order`]: a box is kept unless a kept
/// box of the same class overlaps it with IoU above `iou_threshold`.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let b = d.bbox();
        if !kept.iter().any(|k| k.class == d.class && iou(&k.bbox(), &b) > iou_threshold) {
            kept.push(*d);
        }
    }
    kept
}

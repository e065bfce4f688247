//! Independent helpers for detector tests: exhaustive NMS and target-to-logit inversion.

#![allow(dead_code)]

use aoi_core::bbox::BBox;
use aoi_core::detection::{Detection, LabeledBox};
use aoi_core::ndgrad::Tensor;
use aoi_core::yolite::{AnchorSet, Targets};
use rand::Rng;

fn overlap(a: &Detection, b: &Detection) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    let union = ((a.x + a.w) - a.x) * ((a.y + a.h) - a.y) + ((b.x + b.w) - b.x) * ((b.y + b.h) - b.y) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn outranks(a: &Detection, b: &Detection) -> bool {
    (-a.confidence, a.x, a.y, a.w, a.h, a.class) < (-b.confidence, b.x, b.y, b.w, b.h, b.class)
}

/// Searches all subsets for the one where a box is kept exactly when no kept,
/// higher-ranked box of its class overlaps it by more than `thr`.
pub fn exhaustive_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let n = dets.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..n).any(|j| j != i && kept(j) && dets[j].class == dets[i].class && outranks(&dets[j], &dets[i]) && overlap(&dets[j], &dets[i]) > thr);
            kept(i) != suppressed
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy fixed point must be unique");
    (0..n).filter(|i| found[0] & (1 << i) != 0).map(|i| dets[i]).collect()
}

/// Up to `max` boxes on a 40 px canvas with two classes; confidences on a coarse grid.
pub fn random_detections(rng: &mut impl Rng, max: usize) -> Vec<Detection> {
    (0..rng.gen_range(0..=max))
        .map(|_| {
            let b = BBox::new(rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(2.0..15.0), rng.gen_range(2.0..15.0));
            Detection::new(b, rng.gen_range(0..2), rng.gen_range(1..20) as f64 / 20.0)
        })
        .collect()
}

/// Up to `max` boxes inside a `side` px square.
pub fn random_gt(rng: &mut impl Rng, side: f64, max: usize) -> Vec<LabeledBox> {
    (0..rng.gen_range(1..=max))
        .map(|_| {
            let w = rng.gen_range(3.0..side * 0.4);
            let h = rng.gen_range(3.0..side * 0.4);
            let x = rng.gen_range(0.0..side - w);
            let y = rng.gen_range(0.0..side - h);
            LabeledBox { bbox: BBox::new(x, y, w, h), class: rng.gen_range(0..2) }
        })
        .collect()
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Head tensors that decode exactly to the assigned targets: confident at the
/// positives, silent everywhere else.
pub fn targets_to_logits(t: &Targets, anchors: &AnchorSet, classes: usize) -> Vec<Tensor<f64>> {
    let per = 5 + classes;
    t.grid_sizes
        .iter()
        .enumerate()
        .map(|(s, &side)| {
            let a = anchors.anchors[s].len();
            let ch = a * per;
            let mut data = vec![0.0; t.num_images * ch * side * side];
            for img in 0..t.num_images {
                for k in 0..a {
                    for y in 0..side {
                        for x in 0..side {
                            data[((img * ch + k * per + 4) * side + y) * side + x] = -30.0;
                        }
                    }
                }
            }
            for p in t.positives.iter().filter(|p| p.scale == s) {
                let at = |c: usize| ((p.image * ch + p.anchor * per + c) * side + p.gy) * side + p.gx;
                data[at(0)] = logit(p.off_x);
                data[at(1)] = logit(p.off_y);
                data[at(2)] = p.tw;
                data[at(3)] = p.th;
                data[at(4)] = 30.0;
                for c in 0..classes {
                    data[at(5 + c)] = if c == p.class { 30.0 } else { -30.0 };
                }
            }
            Tensor::new(vec![t.num_images, ch, side, side], data).unwrap()
        })
        .collect()
}

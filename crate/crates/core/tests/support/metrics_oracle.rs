//! Brute-force reference evaluator, written without any of the library's
//! matching or AP code. Shared by the evalkit tests and the acceptance target.

#![allow(dead_code)]

use aoi_core::bbox::BBox;
use aoi_core::detection::{Detection, LabeledBox};
use aoi_core::evalkit::EvalImage;
use rand::Rng;

pub fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    let area = |r: [f64; 4]| ((r[0] + r[2]) - r[0]).max(0.0) * ((r[1] + r[3]) - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        (inter / union).min(1.0)
    } else {
        0.0
    }
}

fn rect(d: &Detection) -> [f64; 4] {
    [d.x, d.y, d.w, d.h]
}

fn before(a: &Detection, ai: usize, b: &Detection, bi: usize) -> bool {
    let ka = (-a.confidence, a.x, a.y, a.w, a.h, a.class, ai);
    let kb = (-b.confidence, b.x, b.y, b.w, b.h, b.class, bi);
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

/// Selection-sort order, then a full scan of every ground truth per detection.
pub fn oracle_match(dets: &[Detection], gts: &[LabeledBox], thr: f64) -> (Vec<bool>, Vec<bool>) {
    let mut used = vec![false; dets.len()];
    let mut tp = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    for _ in 0..dets.len() {
        let mut pick = None;
        for i in 0..dets.len() {
            if !used[i] && pick.is_none_or(|p: usize| before(&dets[i], i, &dets[p], p)) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        used[i] = true;
        let mut best = -1.0;
        let mut best_j = None;
        for (j, g) in gts.iter().enumerate() {
            let v = oracle_iou(rect(&dets[i]), [g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h]);
            if !taken[j] && g.class == dets[i].class && v >= thr && v > best {
                best = v;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            taken[j] = true;
            tp[i] = true;
        }
    }
    (tp, taken)
}

/// Rectangle sum: every true positive adds `1 / n_gt` of recall times the best
/// precision reached at that rank or later.
pub fn oracle_ap(images: &[EvalImage], class: usize, thr: f64) -> Option<f64> {
    let mut ranked: Vec<(f64, String, Detection, bool)> = Vec::new();
    let mut n_gt = 0;
    for im in images {
        n_gt += im.ground_truth.iter().filter(|g| g.class == class).count();
        let (tp, _) = oracle_match(&im.detections, &im.ground_truth, thr);
        for (d, t) in im.detections.iter().zip(tp) {
            if d.class == class {
                ranked.push((d.confidence, im.file.clone(), *d, t));
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| {
        let ka = (-a.0, a.1.clone(), a.2.x, a.2.y, a.2.w, a.2.h, a.2.class);
        let kb = (-b.0, b.1.clone(), b.2.x, b.2.y, b.2.w, b.2.h, b.2.class);
        ka.partial_cmp(&kb).unwrap()
    });
    let n = ranked.len();
    let mut ap = 0.0;
    for k in 0..n {
        if !ranked[k].3 {
            continue;
        }
        let mut best = 0.0f64;
        for k2 in k..n {
            let hits = ranked[..=k2].iter().filter(|r| r.3).count();
            best = best.max(hits as f64 / (k2 + 1) as f64);
        }
        ap += best / n_gt as f64;
    }
    Some(ap)
}

pub fn oracle_map(images: &[EvalImage], classes: usize, thr: f64) -> Option<f64> {
    let aps: Vec<f64> = (0..classes).filter_map(|c| oracle_ap(images, c, thr)).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Up to 5 images; each with ≤ 8 detections and ≤ 5 ground-truth boxes on a small
/// canvas so overlaps are common. Confidences come from a coarse grid to create ties.
pub fn random_instance(rng: &mut impl Rng, classes: usize) -> Vec<EvalImage> {
    let n_img = rng.gen_range(1..=5);
    let rand_box = |rng: &mut dyn rand::RngCore| {
        let x = rng.gen_range(0.0..30.0);
        let y = rng.gen_range(0.0..30.0);
        BBox::new(x, y, rng.gen_range(2.0..15.0), rng.gen_range(2.0..15.0))
    };
    (0..n_img)
        .map(|i| {
            let gts: Vec<LabeledBox> =
                (0..rng.gen_range(0..=5)).map(|_| LabeledBox { bbox: rand_box(rng), class: rng.gen_range(0..classes) }).collect();
            let dets = (0..rng.gen_range(0..=8))
                .map(|_| {
                    let b = if !gts.is_empty() && rng.gen_bool(0.6) {
                        let g = gts[rng.gen_range(0..gts.len())].bbox;
                        BBox::new(g.x + rng.gen_range(-3.0..3.0), g.y + rng.gen_range(-3.0..3.0), g.w * rng.gen_range(0.7..1.3), g.h)
                    } else {
                        rand_box(rng)
                    };
                    Detection::new(b, rng.gen_range(0..classes), rng.gen_range(1..10) as f64 / 10.0)
                })
                .collect();
            EvalImage { file: format!("img_{i}.png"), detections: dets, ground_truth: gts }
        })
        .collect()
}

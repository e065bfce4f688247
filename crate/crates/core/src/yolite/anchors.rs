use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, YoliteError};
use crate::bbox::shape_iou;
use crate::imgsynth::rng_for;

/// Anchor priors `(w, h)` in input pixels, one list per stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSet {
    pub strides: Vec<usize>,
    pub anchors: Vec<Vec<(f64, f64)>>,
}

impl AnchorSet {
    pub fn validate(&self, input_size: usize) -> Result<()> {
        let bad = |m: String| Err(YoliteError::Config(m));
        if self.strides.is_empty() || self.strides.len() != self.anchors.len() {
            return bad(format!("{} strides but {} anchor lists", self.strides.len(), self.anchors.len()));
        }
        if self.strides.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("strides {:?} must be strictly increasing", self.strides));
        }
        for &s in &self.strides {
            if s == 0 || !input_size.is_multiple_of(s) {
                return bad(format!("stride {s} does not divide input size {input_size}"));
            }
        }
        let per_scale = self.anchors[0].len();
        if per_scale == 0 || self.anchors.iter().any(|a| a.len() != per_scale) {
            return bad("every stride needs the same, non-zero number of anchors".into());
        }
        if self.anchors.iter().flatten().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
            return bad("anchor sizes must be positive".into());
        }
        Ok(())
    }

    pub fn per_scale(&self) -> usize {
        self.anchors[0].len()
    }

    /// `(scale, anchor)` with the highest shape IoU against a `w x h` box; first wins ties.
    pub fn best_match(&self, w: f64, h: f64) -> (usize, usize) {
        let mut best = (0, 0, f64::MIN);
        for (s, list) in self.anchors.iter().enumerate() {
            for (a, &(aw, ah)) in list.iter().enumerate() {
                let v = shape_iou(w, h, aw, ah);
                if v > best.2 {
                    best = (s, a, v);
                }
            }
        }
        (best.0, best.1)
    }
}

/// Fixed priors for corpora too small to cluster, scaled from a 256 px layout.
pub fn fallback_anchors(strides: &[usize], per_scale: usize, input_size: usize) -> AnchorSet {
    let f = input_size as f64 / 256.0;
    let anchors = strides
        .iter()
        .map(|&s| {
            let base = 1.5 * s as f64 * f;
            let shapes = [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0), (1.5, 1.5), (3.0, 0.75), (0.75, 3.0)];
            (0..per_scale).map(|i| {
                let (a, b) = shapes[i % shapes.len()];
                let grow = 1.0 + (i / shapes.len()) as f64;
                (base * a * grow, base * b * grow)
            })
            .collect()
        })
        .collect();
    AnchorSet { strides: strides.to_vec(), anchors }
}

/// k-means over box shapes with `1 - IoU` distance (k-means++ seeding). Clusters are
/// sorted by area and handed out to strides smallest first. Falls back to
/// [`fallback_anchors`] when there are fewer distinct shapes than clusters.
pub fn kmeans_anchors(shapes: &[(f64, f64)], strides: &[usize], per_scale: usize, input_size: usize, seed: u64) -> AnchorSet {
    let k = strides.len() * per_scale;
    let mut distinct: Vec<(f64, f64)> = shapes.iter().copied().filter(|&(w, h)| w > 0.0 && h > 0.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return fallback_anchors(strides, per_scale, input_size);
    }
    let points: Vec<(f64, f64)> = shapes.iter().copied().filter(|&(w, h)| w > 0.0 && h > 0.0).collect();
    let dist = |p: (f64, f64), c: (f64, f64)| 1.0 - shape_iou(p.0, p.1, c.0, c.1);
    let mut rng = rng_for(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|&p| centers.iter().map(|&c| dist(p, c)).fold(f64::MAX, f64::min).powi(2)).collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return fallback_anchors(strides, per_scale, input_size);
        }
        let mut r = rng.gen_range(0.0..total);
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        centers.push(points[pick]);
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = (0..k).min_by(|&a, &b| dist(p, centers[a]).total_cmp(&dist(p, centers[b]))).unwrap();
            changed |= assign[i] != best;
            assign[i] = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| *p).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *center = (members.iter().map(|p| p.0).sum::<f64>() / n, members.iter().map(|p| p.1).sum::<f64>() / n);
            }
        }
        if !changed {
            break;
        }
    }
    centers.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    AnchorSet { strides: strides.to_vec(), anchors: centers.chunks(per_scale).map(|c| c.to_vec()).collect() }
}

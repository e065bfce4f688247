use serde::{Deserialize, Serialize};

use super::targets::TW_CLAMP;
use super::{AnchorSet, Result, Targets};
use crate::bbox::{iou, BBox};
use crate::ndgrad::{Graph, NdError, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub r#box: f64,
    pub obj: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { r#box: 5.0, obj: 1.0, cls: 1.0 }
    }
}

/// Weighted terms, each already divided by the batch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub box_term: f64,
    pub obj_term: f64,
    pub cls_term: f64,
}

const CIOU_EPS: f64 = 1e-9;

/// Plain-number CIoU loss `1 - IoU + rho^2 / c^2 + alpha v`.
pub fn ciou_value(pred: &BBox<f64>, gt: &BBox<f64>) -> f64 {
    let i = iou(pred, gt);
    let (pc, gc) = (pred.center(), gt.center());
    let rho2 = (pc.0 - gc.0).powi(2) + (pc.1 - gc.1).powi(2);
    let hull = pred.union_hull(gt);
    let c2 = hull.w * hull.w + hull.h * hull.h + CIOU_EPS;
    let v = 4.0 / std::f64::consts::PI.powi(2) * ((gt.w / gt.h).atan() - (pred.w / pred.h).atan()).powi(2);
    let alpha = v / ((1.0 - i) + v + CIOU_EPS);
    1.0 - i + rho2 / c2 + alpha * v
}

fn vector<T: Scalar>(g: &mut Graph<T>, values: impl Iterator<Item = f64>) -> Var {
    let data: Vec<T> = values.map(T::lit).collect();
    let n = data.len();
    g.constant(Tensor::new(vec![n], data).expect("rank-1"))
}

/// Elementwise CIoU loss between predicted and target boxes given as centre/size vectors.
/// The trade-off weight `alpha` stays inside the graph, so its gradient is included.
pub fn ciou_loss<T: Scalar>(g: &mut Graph<T>, pred: [Var; 4], target: [Var; 4]) -> Result<Var, NdError> {
    let half = T::lit(0.5);
    let eps = T::lit(CIOU_EPS);
    let corners = |g: &mut Graph<T>, [cx, cy, w, h]: [Var; 4]| -> Result<[Var; 4], NdError> {
        let hw = g.scale(w, half);
        let hh = g.scale(h, half);
        Ok([g.sub(cx, hw)?, g.sub(cy, hh)?, g.add(cx, hw)?, g.add(cy, hh)?])
    };
    let [px1, py1, px2, py2] = corners(g, pred)?;
    let [gx1, gy1, gx2, gy2] = corners(g, target)?;
    let n = g.shape(pred[0]).to_vec();
    let zero = g.constant(Tensor::zeros(&n));

    let ix1 = g.maximum(px1, gx1)?;
    let iy1 = g.maximum(py1, gy1)?;
    let ix2 = g.minimum(px2, gx2)?;
    let iy2 = g.minimum(py2, gy2)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.maximum(iw, zero)?;
    let ih = g.sub(iy2, iy1)?;
    let ih = g.maximum(ih, zero)?;
    let inter = g.mul(iw, ih)?;
    let pa = g.mul(pred[2], pred[3])?;
    let ta = g.mul(target[2], target[3])?;
    let union = g.add(pa, ta)?;
    let union = g.sub(union, inter)?;
    let union = g.add_scalar(union, eps);
    let iou = g.div(inter, union)?;

    let dx = g.sub(pred[0], target[0])?;
    let dy = g.sub(pred[1], target[1])?;
    let dx2 = g.mul(dx, dx)?;
    let dy2 = g.mul(dy, dy)?;
    let rho2 = g.add(dx2, dy2)?;
    let cx1 = g.minimum(px1, gx1)?;
    let cy1 = g.minimum(py1, gy1)?;
    let cx2 = g.maximum(px2, gx2)?;
    let cy2 = g.maximum(py2, gy2)?;
    let cw = g.sub(cx2, cx1)?;
    let ch = g.sub(cy2, cy1)?;
    let cw2 = g.mul(cw, cw)?;
    let ch2 = g.mul(ch, ch)?;
    let c2 = g.add(cw2, ch2)?;
    let c2 = g.add_scalar(c2, eps);
    let dist = g.div(rho2, c2)?;

    let pr = g.div(pred[2], pred[3])?;
    let pa = g.atan(pr);
    let tr = g.div(target[2], target[3])?;
    let ta = g.atan(tr);
    let da = g.sub(ta, pa)?;
    let da2 = g.mul(da, da)?;
    let v = g.scale(da2, T::lit(4.0 / std::f64::consts::PI.powi(2)));
    let one_minus = g.neg(iou);
    let one_minus = g.add_scalar(one_minus, T::one());
    let denom = g.add(one_minus, v)?;
    let denom = g.add_scalar(denom, eps);
    let alpha = g.div(v, denom)?;
    let av = g.mul(alpha, v)?;

    let loss = g.add(one_minus, dist)?;
    g.add(loss, av)
}

fn slot(ch: usize, side: usize, image: usize, c: usize, y: usize, x: usize) -> usize {
    ((image * ch + c) * side + y) * side + x
}

/// `(w_box * sum_pos CIoU + w_obj * sum_all BCE(obj) + w_cls * sum_pos BCE(cls)) / N`
/// over every head in `preds` (`[N, A(5+C), S, S]` each).
pub fn detector_loss<T: Scalar>(
    g: &mut Graph<T>,
    preds: &[Var],
    targets: &Targets,
    anchors: &AnchorSet,
    num_classes: usize,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let per = 5 + num_classes;
    let n = targets.num_images;
    let mut terms: [Option<Var>; 3] = [None, None, None];
    let mut push = |g: &mut Graph<T>, k: usize, v: Var| -> Result<(), NdError> {
        terms[k] = Some(match terms[k] {
            Some(acc) => g.add(acc, v)?,
            None => v,
        });
        Ok(())
    };
    for (s, &pv) in preds.iter().enumerate() {
        let shape = g.shape(pv).to_vec();
        let (ch, side) = (shape[1], shape[2]);
        let a_count = anchors.anchors[s].len();
        if shape[0] != n || ch != a_count * per || side != targets.grid_sizes[s] {
            return Err(NdError::ShapeMismatch {
                op: "detector_loss",
                left: shape,
                right: vec![n, a_count * per, targets.grid_sizes[s], targets.grid_sizes[s]],
            }
            .into());
        }
        let pos: Vec<_> = targets.positives.iter().filter(|p| p.scale == s).collect();

        // objectness over every slot
        let mut obj_idx = Vec::with_capacity(n * a_count * side * side);
        for img in 0..n {
            for a in 0..a_count {
                for y in 0..side {
                    for x in 0..side {
                        obj_idx.push(slot(ch, side, img, a * per + 4, y, x));
                    }
                }
            }
        }
        let mut obj_t = vec![T::zero(); obj_idx.len()];
        for p in &pos {
            obj_t[((p.image * a_count + p.anchor) * side + p.gy) * side + p.gx] = T::one();
        }
        let obj = g.gather(pv, obj_idx)?;
        let obj = g.bce_with_logits(obj, obj_t)?;
        let obj = g.sum(obj);
        push(g, 1, obj)?;

        if pos.is_empty() {
            continue;
        }
        let stride = anchors.strides[s] as f64;
        let pick = |g: &mut Graph<T>, k: usize| {
            g.gather(pv, pos.iter().map(|p| slot(ch, side, p.image, p.anchor * per + k, p.gy, p.gx)).collect())
        };
        let tx = pick(g, 0)?;
        let ty = pick(g, 1)?;
        let tw = pick(g, 2)?;
        let th = pick(g, 3)?;
        let sx = g.sigmoid(tx);
        let sy = g.sigmoid(ty);
        let cell_x = vector(g, pos.iter().map(|p| p.gx as f64));
        let cell_y = vector(g, pos.iter().map(|p| p.gy as f64));
        let px = g.add(sx, cell_x)?;
        let px = g.scale(px, T::lit(stride));
        let py = g.add(sy, cell_y)?;
        let py = g.scale(py, T::lit(stride));
        let lim = T::lit(TW_CLAMP);
        let tw = g.clamp(tw, -lim, lim);
        let th = g.clamp(th, -lim, lim);
        let ew = g.exp(tw);
        let eh = g.exp(th);
        let aw = vector(g, pos.iter().map(|p| anchors.anchors[s][p.anchor].0));
        let ah = vector(g, pos.iter().map(|p| anchors.anchors[s][p.anchor].1));
        let pw = g.mul(ew, aw)?;
        let ph = g.mul(eh, ah)?;
        let gcx = vector(g, pos.iter().map(|p| p.bbox.center().0));
        let gcy = vector(g, pos.iter().map(|p| p.bbox.center().1));
        let gw = vector(g, pos.iter().map(|p| p.bbox.w));
        let gh = vector(g, pos.iter().map(|p| p.bbox.h));
        let ciou = ciou_loss(g, [px, py, pw, ph], [gcx, gcy, gw, gh])?;
        let ciou = g.sum(ciou);
        push(g, 0, ciou)?;

        let mut cls_idx = Vec::with_capacity(pos.len() * num_classes);
        let mut cls_t = Vec::with_capacity(pos.len() * num_classes);
        for p in &pos {
            for c in 0..num_classes {
                cls_idx.push(slot(ch, side, p.image, p.anchor * per + 5 + c, p.gy, p.gx));
                cls_t.push(if c == p.class { T::one() } else { T::zero() });
            }
        }
        let cls = g.gather(pv, cls_idx)?;
        let cls = g.bce_with_logits(cls, cls_t)?;
        let cls = g.sum(cls);
        push(g, 2, cls)?;
    }
    let inv_n = 1.0 / n as f64;
    let w = [weights.r#box, weights.obj, weights.cls];
    let mut total: Option<Var> = None;
    let mut parts = [0.0; 3];
    for k in 0..3 {
        if let Some(v) = terms[k] {
            let scaled = g.scale(v, T::lit(w[k] * inv_n));
            parts[k] = g.value(scaled).item().to_f64_lossy();
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
    }
    let total = total.ok_or_else(|| NdError::Precondition("detector_loss: no prediction heads".into()))?;
    let breakdown = LossBreakdown {
        total: g.value(total).item().to_f64_lossy(),
        box_term: parts[0],
        obj_term: parts[1],
        cls_term: parts[2],
    };
    Ok((total, breakdown))
}

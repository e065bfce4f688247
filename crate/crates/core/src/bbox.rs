//! Axis-aligned boxes in pixel coordinates: `(x_min, y_min, width, height)`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        Self { x: cx - w * half, y: cy - h * half, w, h }
    }

    pub fn x_max(&self) -> T {
        self.x + self.w
    }

    pub fn y_max(&self) -> T {
        self.y + self.h
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (self.x + self.w * half, self.y + self.h * half)
    }

    /// Computed from the corners, like [`intersection`](Self::intersection), so a box
    /// intersected with itself gives exactly its area.
    pub fn area(&self) -> T {
        (self.x_max() - self.x).max(T::zero()) * (self.y_max() - self.y).max(T::zero())
    }

    pub fn intersection(&self, other: &Self) -> T {
        let iw = (self.x_max().min(other.x_max()) - self.x.max(other.x)).max(T::zero());
        let ih = (self.y_max().min(other.y_max()) - self.y.max(other.y)).max(T::zero());
        iw * ih
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: T, height: T) -> Self {
        let x0 = self.x.max(T::zero()).min(width);
        let y0 = self.y.max(T::zero()).min(height);
        let x1 = self.x_max().max(T::zero()).min(width);
        let y1 = self.y_max().max(T::zero()).min(height);
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn is_within(&self, width: T, height: T) -> bool {
        self.x >= T::zero() && self.y >= T::zero() && self.x_max() <= width && self.y_max() <= height
    }

    pub fn scaled(&self, sx: T, sy: T) -> Self {
        Self { x: self.x * sx, y: self.y * sy, w: self.w * sx, h: self.h * sy }
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self { x: self.x + dx, y: self.y + dy, w: self.w, h: self.h }
    }

    /// Smallest box covering both.
    pub fn union_hull(&self, other: &Self) -> Self {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.x_max().max(other.x_max());
        let y1 = self.y_max().max(other.y_max());
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x: U::lit(self.x.to_f64_lossy()),
            y: U::lit(self.y.to_f64_lossy()),
            w: U::lit(self.w.to_f64_lossy()),
            h: U::lit(self.h.to_f64_lossy()),
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        (inter / union).min(T::one())
    }
}

/// IoU of two boxes sharing a center, i.e. comparing shapes only.
pub fn shape_iou<T: Scalar>(w1: T, h1: T, w2: T, h2: T) -> T {
    let inter = w1.min(w2) * h1.min(h2);
    let union = w1 * h1 + w2 * h2 - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)), 0.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0f64 / 3.0).abs() < 1e-15);
        let empty = BBox::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(iou(&empty, &empty), 0.0);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            a in (0.0f64..50.0, 0.0f64..50.0, 0.0f64..30.0, 0.0f64..30.0),
            b in (0.0f64..50.0, 0.0f64..50.0, 0.0f64..30.0, 0.0f64..30.0),
        ) {
            let a = BBox::new(a.0, a.1, a.2, a.3);
            let b = BBox::new(b.0, b.1, b.2, b.3);
            let (ab, ba) = (iou(&a, &b), iou(&b, &a));
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }
    }
}

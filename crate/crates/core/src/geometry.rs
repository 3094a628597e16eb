//! Axis-aligned box arithmetic.
//!
//! Boxes are continuous pixel-space rectangles stored as (left, top, width,
//! height). Areas are `width * height` with no +1 pixel convention.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinates must be finite (got left={left}, top={top}, width={width}, height={height})")]
    NonFinite {
        left: f64,
        top: f64,
        width: f64,
        height: f64,
    },
    #[error("box must have positive width and height (got {width}x{height})")]
    Degenerate { width: f64, height: f64 },
}

/// An axis-aligned box with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = GeometryError;
    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BBox::new(r.left, r.top, r.width, r.height)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            left: b.left,
            top: b.top,
            width: b.width,
            height: b.height,
        }
    }
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(left.is_finite() && top.is_finite() && width.is_finite() && height.is_finite()) {
            return Err(GeometryError::NonFinite {
                left,
                top,
                width,
                height,
            });
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(GeometryError::Degenerate { width, height });
        }
        Ok(Self {
            left,
            top,
            width,
            height,
        })
    }

    /// Builds a box from its center, width and height.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(cx - width / 2.0, cy - height / 2.0, width, height)
    }

    /// Builds a box from (center x, center y, aspect = w/h, height).
    pub fn from_xyah(cx: f64, cy: f64, aspect: f64, height: f64) -> Result<Self, GeometryError> {
        Self::from_center(cx, cy, aspect * height, height)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    /// (center x, center y, w/h, h), the Kalman measurement layout.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.width / self.height, self.height]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.left + dx, self.top + dy, self.width, self.height)
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.left.max(other.left);
        let h = self.bottom().min(other.bottom()) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Area of the smallest box enclosing both.
    fn hull_area(&self, other: &BBox) -> f64 {
        let w = self.right().max(other.right()) - self.left.min(other.left);
        let h = self.bottom().max(other.bottom()) - self.top.min(other.top);
        w * h
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (hull - union) / hull`, in `(-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull_area(b);
    let iou = if inter == 0.0 { 0.0 } else { inter / union };
    iou - (hull - union) / hull
}

/// Height divided by width.
pub fn aspect_ratio(b: &BBox) -> f64 {
    b.height / b.width
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(l: f64, t: f64, w: f64, h: f64) -> BBox {
        BBox::new(l, t, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(100.0, 100.0, 5.0, 5.0)), 0.0);
        // intersection 50, union 150
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn giou_examples() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        // hull 3, union 2
        assert!((giou(&a, &bx(2.0, 0.0, 1.0, 1.0)) + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn aspect_examples() {
        assert!((aspect_ratio(&bx(0.0, 0.0, 28.0, 32.0)) - 32.0 / 28.0).abs() < 1e-12);
        assert_eq!(aspect_ratio(&bx(3.0, 3.0, 7.0, 7.0)), 1.0);
        assert_eq!(aspect_ratio(&bx(0.0, 0.0, 10.0, 5.0)), 0.5);
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(matches!(
            BBox::new(0.0, 0.0, 0.0, 3.0),
            Err(GeometryError::Degenerate { .. })
        ));
        assert!(BBox::new(0.0, 0.0, 2.0, -1.0).is_err());
        assert!(matches!(
            BBox::new(f64::NAN, 0.0, 1.0, 1.0),
            Err(GeometryError::NonFinite { .. })
        ));
        assert!(BBox::new(0.0, f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn xyah_round_trip() {
        let b = bx(57.0, 86.0, 28.0, 32.0);
        let [cx, cy, a, h] = b.to_xyah();
        let back = BBox::from_xyah(cx, cy, a, h).unwrap();
        assert!((back.left() - 57.0).abs() < 1e-12);
        assert!((back.width() - 28.0).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64).prop_map(|(l, t, w, h)| bx(l, t, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(giou(&a, &b), giou(&b, &a));
        }

        #[test]
        fn giou_never_exceeds_iou(a in arb_box(), b in arb_box()) {
            let g = giou(&a, &b);
            prop_assert!(g <= iou(&a, &b) + 1e-12);
            prop_assert!(g > -1.0 && g <= 1.0);
        }

        #[test]
        fn translation_invariance(a in arb_box(), b in arb_box(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let at = a.translate(dx, dy).unwrap();
            let bt = b.translate(dx, dy).unwrap();
            prop_assert!((iou(&a, &b) - iou(&at, &bt)).abs() < 1e-9);
            prop_assert!((giou(&a, &b) - giou(&at, &bt)).abs() < 1e-9);
        }

        #[test]
        fn iou_one_only_for_identical(a in arb_box(), b in arb_box()) {
            if a != b {
                prop_assert!(iou(&a, &b) < 1.0);
            }
        }
    }

    #[test]
    fn giou_equals_iou_when_hull_is_union() {
        // nested boxes: hull == union
        let outer = bx(0.0, 0.0, 10.0, 10.0);
        let inner = bx(2.0, 2.0, 3.0, 3.0);
        assert!((giou(&outer, &inner) - iou(&outer, &inner)).abs() < 1e-12);
    }
}

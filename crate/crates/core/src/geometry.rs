//! Axis-aligned boxes in normalized image coordinates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Center/size box `(cx, cy, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cxcywh<S>(pub [S; 4]);

/// Corner box `(x1, y1, x2, y2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Xyxy<S>(pub [S; 4]);

impl<S: Scalar> Cxcywh<S> {
    pub fn to_xyxy(self) -> Xyxy<S> {
        let [cx, cy, w, h] = self.0;
        let half = S::lit(0.5);
        Xyxy([cx - half * w, cy - half * h, cx + half * w, cy + half * h])
    }

    pub fn l1(self, other: Self) -> S {
        self.0.iter().zip(other.0).map(|(&a, b)| (a - b).abs()).sum()
    }
}

impl<S: Scalar> Xyxy<S> {
    pub fn to_cxcywh(self) -> Cxcywh<S> {
        let [x1, y1, x2, y2] = self.0;
        let half = S::lit(0.5);
        Cxcywh([half * (x1 + x2), half * (y1 + y2), x2 - x1, y2 - y1])
    }

    pub fn area(self) -> S {
        let [x1, y1, x2, y2] = self.0;
        (x2 - x1) * (y2 - y1)
    }

    fn validate(self) -> Result<Self> {
        let [x1, y1, x2, y2] = self.0;
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Degenerate(format!("box {:?} has no area", self.0)));
        }
        Ok(self)
    }

    pub fn intersection(self, other: Self) -> S {
        let [ax1, ay1, ax2, ay2] = self.0;
        let [bx1, by1, bx2, by2] = other.0;
        let w = (ax2.min(bx2) - ax1.max(bx1)).max(S::zero());
        let h = (ay2.min(by2) - ay1.max(by1)).max(S::zero());
        w * h
    }

    /// Smallest box containing both.
    pub fn hull(self, other: Self) -> Self {
        let [ax1, ay1, ax2, ay2] = self.0;
        let [bx1, by1, bx2, by2] = other.0;
        Xyxy([ax1.min(bx1), ay1.min(by1), ax2.max(bx2), ay2.max(by2)])
    }

    pub fn translate(self, dx: S, dy: S) -> Self {
        let [x1, y1, x2, y2] = self.0;
        Xyxy([x1 + dx, y1 + dy, x2 + dx, y2 + dy])
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou<S: Scalar>(a: Xyxy<S>, b: Xyxy<S>) -> Result<S> {
    let (a, b) = (a.validate()?, b.validate()?);
    let inter = a.intersection(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Generalized IoU: `iou - (hull - union) / hull`, in `(-1, 1]`.
pub fn giou<S: Scalar>(a: Xyxy<S>, b: Xyxy<S>) -> Result<S> {
    let (a, b) = (a.validate()?, b.validate()?);
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    // Rounding can put `union` a hair above `hull` when one box contains the other.
    let empty = (hull - union).max(S::zero());
    Ok(inter / union - empty / hull)
}

pub fn giou_loss<S: Scalar>(a: Xyxy<S>, b: Xyxy<S>) -> Result<S> {
    Ok(S::one() - giou(a, b)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn b(v: [f64; 4]) -> Xyxy<f64> {
        Xyxy(v)
    }

    #[test]
    fn hand_values() {
        assert_eq!(iou(b([0.0, 0.0, 1.0, 1.0]), b([0.0, 0.0, 1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(giou(b([0.0, 0.0, 1.0, 1.0]), b([0.0, 0.0, 1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(iou(b([0.0, 0.0, 2.0, 2.0]), b([1.0, 1.0, 3.0, 3.0])).unwrap(), 1.0 / 7.0);
        assert_eq!(iou(b([0.0, 0.0, 1.0, 1.0]), b([2.0, 2.0, 3.0, 3.0])).unwrap(), 0.0);
        let g = giou(b([0.0, 0.0, 1.0, 1.0]), b([2.0, 2.0, 3.0, 3.0])).unwrap();
        assert!((g + 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(giou_loss(b([0.1, 0.2, 0.3, 0.4]), b([0.1, 0.2, 0.3, 0.4])).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(matches!(
            iou(b([0.0, 0.0, 0.0, 1.0]), b([0.0, 0.0, 1.0, 1.0])),
            Err(Error::Degenerate(_))
        ));
        assert!(giou(b([0.0, 0.0, 1.0, 1.0]), b([0.5, 0.5, 0.5, 0.2])).is_err());
    }

    #[test]
    fn conversions_round_trip() {
        let c = Cxcywh([0.5, 0.25, 0.5, 0.25]);
        assert_eq!(c.to_xyxy(), Xyxy([0.25, 0.125, 0.75, 0.375]));
        assert_eq!(c.to_xyxy().to_cxcywh(), c);
    }

    fn unit_box() -> impl Strategy<Value = Xyxy<f64>> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..0.5f64, 0.01..0.5f64)
            .prop_map(|(x, y, w, h)| Xyxy([x, y, (x + w).min(1.0), (y + h).min(1.0)]))
    }

    #[test]
    fn nested_boxes_have_giou_equal_to_iou() {
        let outer = b([-1.8040198706564476, 0.150807243531065, 1.0595249292616291, 3.054283617542922]);
        let inner = b([-1.0652592188599659, 0.4874848017616662, 0.2952961326345256, 2.264768498039458]);
        assert_eq!(giou(outer, inner).unwrap(), iou(outer, inner).unwrap());
        assert_eq!(giou(inner, outer).unwrap(), iou(outer, inner).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn giou_properties(a in unit_box(), b in unit_box(), dx in -0.05..0.05f64, dy in -0.05..0.05f64) {
            let g = giou(a, b).unwrap();
            let i = iou(a, b).unwrap();
            prop_assert!(g > -1.0 && g <= 1.0);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!(g <= i);
            prop_assert_eq!(giou(a, a).unwrap(), 1.0);
            let shifted = giou(a.translate(dx, dy), b.translate(dx, dy)).unwrap();
            prop_assert!((shifted - g).abs() < 1e-12);
        }
    }
}

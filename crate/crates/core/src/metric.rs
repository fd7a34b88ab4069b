//! Top-1 grounding accuracy.

use crate::geometry::{iou, BBox};

/// A prediction is correct when its IoU with the ground truth strictly
/// exceeds this threshold.
pub const HIT_IOU: f64 = 0.5;

pub fn is_hit(pred: &BBox, gt: &BBox) -> bool {
    iou(pred, gt) > HIT_IOU
}

/// Fraction of `(prediction, ground truth)` pairs that are hits; `None` for
/// an empty input.
pub fn top1_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a BBox, &'a BBox)>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (pred, gt) in pairs {
        total += 1;
        hits += usize::from(is_hit(pred, gt));
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_half_is_a_miss() {
        // Same height, prediction shifted so the overlap is 2/3 of each box:
        // inter = 20, union = 40.
        let gt = BBox::new(15.0, 5.0, 30.0, 10.0).unwrap();
        let pred = BBox::new(25.0, 5.0, 30.0, 10.0).unwrap();
        assert_eq!(iou(&pred, &gt), 0.5);
        assert!(!is_hit(&pred, &gt));
        assert_eq!(top1_accuracy([(&pred, &gt)]), Some(0.0));
        assert_eq!(top1_accuracy([(&gt, &gt)]), Some(1.0));
        assert_eq!(top1_accuracy(core::iter::empty()), None);
    }
}

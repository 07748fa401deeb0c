//! Depth-completion and segmentation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, MaskImage, Raster, RasterError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("empty evaluation set: no masked pixel has ground truth")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalResult {
    /// Meters.
    pub rmse: f64,
    /// Meters.
    pub mae: f64,
    /// Mean of |pred - gt| / gt.
    pub rel: f64,
    pub delta_105: f64,
    pub delta_110: f64,
    pub delta_125: f64,
    pub pixel_count: usize,
}

/// Column headers of the depth report, in order.
pub const DEPTH_COLUMNS: [&str; 6] = ["RMSE", "MAE", "Rel", "1.05", "1.10", "1.25"];

impl DepthEvalResult {
    pub fn columns(&self) -> [f64; 6] {
        [self.rmse, self.mae, self.rel, self.delta_105, self.delta_110, self.delta_125]
    }
}

/// Running sums for depth metrics, so pixels can be pooled across frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthAccumulator {
    count: usize,
    sq: f64,
    abs: f64,
    rel: f64,
    within: [usize; 3],
}

impl DepthAccumulator {
    /// Adds one pixel; ignored when the ground truth is missing (0).
    pub fn push(&mut self, pred: f64, gt: f64) {
        if !(gt > 0.0) {
            return;
        }
        let err = pred - gt;
        self.count += 1;
        self.sq += err * err;
        self.abs += err.abs();
        self.rel += err.abs() / gt;
        let ratio = (pred / gt).max(gt / pred);
        for (n, tau) in self.within.iter_mut().zip([1.05, 1.10, 1.25]) {
            if ratio < tau {
                *n += 1;
            }
        }
    }

    /// Adds every pixel selected by a nonzero mask value.
    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap, mask: &MaskImage) -> Result<(), MetricsError> {
        pred.ensure_same_dims(gt)?;
        pred.ensure_same_dims(mask)?;
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
            if m != 0 {
                self.push(p, g);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DepthEvalResult, MetricsError> {
        if self.count == 0 {
            return Err(MetricsError::Empty);
        }
        let n = self.count as f64;
        let frac = |k: usize| self.within[k] as f64 / n;
        Ok(DepthEvalResult {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            rel: self.rel / n,
            delta_105: frac(0),
            delta_110: frac(1),
            delta_125: frac(2),
            pixel_count: self.count,
        })
    }
}

/// Depth metrics over masked pixels whose ground truth is present.
pub fn eval_depth(pred: &DepthMap, gt: &DepthMap, mask: &MaskImage) -> Result<DepthEvalResult, MetricsError> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt, mask)?;
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Binary,
    Category,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "binary" => Ok(Self::Binary),
            "category" => Ok(Self::Category),
            other => Err(format!("unknown granularity '{other}' (expected binary or category)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEvalResult {
    pub f1: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Pixel confusion counts for one positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count(pred: &[u32], gt: &[u32], positive: impl Fn(u32) -> bool) -> Self {
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (positive(p), positive(g)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Ratios with the empty-mask convention: an undefined ratio is 1 when
    /// neither mask has positives and 0 otherwise.
    pub fn metrics(&self) -> SegEvalResult {
        let both_empty = self.tp + self.fp + self.fn_ == 0;
        let ratio = |num: u64, den: u64| {
            if den > 0 {
                num as f64 / den as f64
            } else if both_empty {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else if both_empty {
            1.0
        } else {
            0.0
        };
        let total = self.tp + self.fp + self.fn_ + self.tn;
        SegEvalResult {
            f1,
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
            accuracy: if total > 0 { (self.tp + self.tn) as f64 / total as f64 } else { 1.0 },
            precision,
            recall,
        }
    }
}

fn mean(results: &[SegEvalResult]) -> SegEvalResult {
    let n = results.len() as f64;
    let avg = |f: fn(&SegEvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    SegEvalResult {
        f1: avg(|r| r.f1),
        iou: avg(|r| r.iou),
        accuracy: avg(|r| r.accuracy),
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
    }
}

/// Per-class confusion counts for a granularity. Binary uses one entry keyed 0.
pub fn confusions(pred: &MaskImage, gt: &MaskImage, granularity: Granularity) -> Result<Vec<(u32, Confusion)>, MetricsError> {
    pred.ensure_same_dims(gt)?;
    let (p, g) = (pred.data(), gt.data());
    let classes: BTreeSet<u32> = g.iter().copied().filter(|&c| c != 0).collect();
    if granularity == Granularity::Binary || classes.is_empty() {
        return Ok(vec![(0, Confusion::count(p, g, |v| v != 0))]);
    }
    Ok(classes
        .into_iter()
        .map(|c| (c, Confusion::count(p, g, |v| v == c)))
        .collect())
}

/// Macro average over the classes of pooled confusion counts.
pub fn summarize(confusions: &[(u32, Confusion)]) -> SegEvalResult {
    let per: Vec<SegEvalResult> = confusions.iter().map(|(_, c)| c.metrics()).collect();
    mean(&per)
}

/// Binary: positives are nonzero pixels. Category: metrics per gt class id,
/// macro-averaged over the classes present in `gt`.
pub fn eval_segmentation(pred: &MaskImage, gt: &MaskImage, granularity: Granularity) -> Result<SegEvalResult, MetricsError> {
    Ok(summarize(&confusions(pred, gt, granularity)?))
}

/// Aligned text table, one row per labeled result, columns in [`DEPTH_COLUMNS`] order.
pub fn format_depth_table(rows: &[(String, DepthEvalResult)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "");
    for c in DEPTH_COLUMNS {
        let _ = write!(out, " {c:>9}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for v in r.columns() {
            let _ = write!(out, " {v:>9.4}");
        }
        out.push('\n');
    }
    out
}

/// Binary mask (0/1) selecting pixels where `raster` is nonzero.
pub fn nonzero_mask<T: PartialEq + Default + Copy>(raster: &Raster<T>) -> MaskImage {
    raster.map(|v| u32::from(*v != T::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(v: &[f64]) -> DepthMap {
        Raster::from_vec(v.len(), 1, v.to_vec())
    }

    fn mask(v: &[u32]) -> MaskImage {
        Raster::from_vec(v.len(), 1, v.to_vec())
    }

    #[test]
    fn perfect_prediction() {
        let g = depth(&[1.0, 2.0, 3.0]);
        let r = eval_depth(&g, &g, &mask(&[1, 1, 1])).unwrap();
        assert_eq!((r.rmse, r.mae, r.rel), (0.0, 0.0, 0.0));
        assert_eq!((r.delta_105, r.delta_110, r.delta_125), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_four_percent() {
        let r = eval_depth(&depth(&[1.04; 4]), &depth(&[1.0; 4]), &mask(&[1; 4])).unwrap();
        assert!((r.mae - 0.04).abs() < 1e-12);
        assert_eq!((r.delta_105, r.delta_110), (1.0, 1.0));
    }

    #[test]
    fn two_pixel_hand_values() {
        let r = eval_depth(&depth(&[1.1, 1.8]), &depth(&[1.0, 2.0]), &mask(&[1, 1])).unwrap();
        assert!((r.rmse - ((0.01f64 + 0.04) / 2.0).sqrt()).abs() < 1e-12);
        assert!((r.rel - 0.1).abs() < 1e-12);
        assert!((r.mae - 0.15).abs() < 1e-12);
    }

    #[test]
    fn missing_gt_and_unmasked_excluded() {
        let r = eval_depth(&depth(&[5.0, 1.0, 9.0]), &depth(&[0.0, 1.0, 2.0]), &mask(&[1, 1, 0])).unwrap();
        assert_eq!(r.pixel_count, 1);
        assert_eq!(r.rmse, 0.0);
        assert!(matches!(eval_depth(&depth(&[1.0]), &depth(&[0.0]), &mask(&[1])), Err(MetricsError::Empty)));
    }

    #[test]
    fn segmentation_cases() {
        let gt = mask(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let r = eval_segmentation(&gt, &gt, Granularity::Binary).unwrap();
        assert_eq!(r, SegEvalResult { f1: 1.0, iou: 1.0, accuracy: 1.0, precision: 1.0, recall: 1.0 });

        let disjoint = mask(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let r = eval_segmentation(&disjoint, &gt, Granularity::Binary).unwrap();
        assert_eq!((r.iou, r.precision, r.recall, r.f1), (0.0, 0.0, 0.0, 0.0));

        let half = mask(&[1, 1, 0, 0, 0, 0, 0, 0]);
        let r = eval_segmentation(&half, &gt, Granularity::Binary).unwrap();
        assert_eq!((r.precision, r.recall, r.iou), (1.0, 0.5, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn empty_masks_convention() {
        let empty = mask(&[0; 4]);
        let r = eval_segmentation(&empty, &empty, Granularity::Category).unwrap();
        assert_eq!((r.f1, r.iou, r.precision, r.recall), (1.0, 1.0, 1.0, 1.0));
        let r = eval_segmentation(&mask(&[0, 2, 0, 0]), &empty, Granularity::Binary).unwrap();
        assert_eq!((r.f1, r.iou, r.precision, r.recall), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn category_macro_average() {
        // class 1: perfect; class 2: half recalled
        let gt = mask(&[1, 1, 2, 2, 0, 0]);
        let pred = mask(&[1, 1, 2, 0, 0, 0]);
        let r = eval_segmentation(&pred, &gt, Granularity::Category).unwrap();
        assert!((r.recall - 0.75).abs() < 1e-12);
        assert!((r.precision - 1.0).abs() < 1e-12);
        assert!((r.iou - 0.75).abs() < 1e-12);
    }

    #[test]
    fn table_column_order() {
        let r = eval_depth(&depth(&[1.0]), &depth(&[1.0]), &mask(&[1])).unwrap();
        let table = format_depth_table(&[("ours".into(), r)]);
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, DEPTH_COLUMNS);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(values in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 1..200)) {
            let pred = depth(&values.iter().map(|v| v.0).collect::<Vec<_>>());
            let gt = depth(&values.iter().map(|v| v.1).collect::<Vec<_>>());
            let r = eval_depth(&pred, &gt, &mask(&vec![1; values.len()])).unwrap();
            prop_assert!(r.rmse >= r.mae - 1e-15);
            prop_assert!(r.delta_105 <= r.delta_110 && r.delta_110 <= r.delta_125);
            let swapped = eval_depth(&gt, &pred, &mask(&vec![1; values.len()])).unwrap();
            prop_assert_eq!((swapped.delta_105, swapped.delta_110, swapped.delta_125), (r.delta_105, r.delta_110, r.delta_125));
        }

        #[test]
        fn binary_equals_single_class(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let pred = mask(&bits.iter().map(|b| b.0 as u32 * 3).collect::<Vec<_>>());
            let gt = mask(&bits.iter().map(|b| b.1 as u32 * 3).collect::<Vec<_>>());
            let a = eval_segmentation(&pred, &gt, Granularity::Binary).unwrap();
            let b = eval_segmentation(&pred, &gt, Granularity::Category).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

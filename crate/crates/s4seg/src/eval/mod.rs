//! Segmentation metrics, ratio-sweep protocols, and report emission.
//!
//! Metrics are micro-aggregated: TP/FP/FN pool over every pixel of every
//! test slice before the ratios are formed, which keeps lesion-free slices
//! from producing degenerate per-slice terms. Any 0/0 ratio is defined as 1
//! (vacuous perfect agreement) and logged.

mod plot;
mod sweep;

pub use plot::render_metric_lines;
pub use sweep::{emit_report, run_ratio_sweep, RatioPoint, SweepAxis, SweepResult, SweepRow};

use ndarray::{Array2, NdFloat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::MaskLabel;
use crate::losses::SoftPrediction;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch at slice {index}: prediction {pred:?} vs target {target:?}")]
    ShapeMismatch {
        index: usize,
        pred: (usize, usize),
        target: (usize, usize),
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training failed for ratio {ratio} seed {seed}: {source}")]
    Sweep {
        ratio: String,
        seed: u64,
        #[source]
        source: Box<crate::trainer::TrainError>,
    },
    #[error(transparent)]
    Datagen(#[from] crate::datagen::DatagenError),
}

/// Run mode recorded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    #[serde(rename = "semi-supervised")]
    SemiSupervised,
    #[serde(rename = "fully-supervised")]
    FullySupervised,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::SemiSupervised => write!(f, "semi-supervised"),
            RunMode::FullySupervised => write!(f, "fully-supervised"),
        }
    }
}

/// The four segmentation metrics plus run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: f64,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    pub n_test_slices: usize,
    pub labeled_ratio: f64,
    pub unlabeled_ratio: f64,
    pub mode: RunMode,
    pub seed: u64,
}

/// Pixel-pooled confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Metric values straight from pooled counts, before metadata is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues {
    pub iou: f64,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
}

const LESION_CLASS: u8 = 1;

/// Pools confusion counts for the lesion class over all slices.
pub fn confusion_counts(
    preds: &[MaskLabel],
    targets: &[MaskLabel],
) -> Result<ConfusionCounts, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty("prediction list"));
    }
    if preds.len() != targets.len() {
        return Err(EvalError::Empty("prediction/target length mismatch"));
    }
    let mut counts = ConfusionCounts::default();
    for (idx, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.dim() != t.dim() {
            return Err(EvalError::ShapeMismatch {
                index: idx,
                pred: p.dim(),
                target: t.dim(),
            });
        }
        for (pv, tv) in p.labels().iter().zip(t.labels().iter()) {
            let pp = *pv == LESION_CLASS;
            let tt = *tv == LESION_CLASS;
            match (pp, tt) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(counts)
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    /// IoU, Dice, recall, precision from the pooled counts; 0/0 is 1.
    pub fn metrics(&self) -> MetricValues {
        MetricValues {
            iou: ratio_or_one(self.tp, self.tp + self.fp + self.fn_),
            dice: ratio_or_one(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            recall: ratio_or_one(self.tp, self.tp + self.fn_),
            precision: ratio_or_one(self.tp, self.tp + self.fp),
        }
    }
}

/// Computes the four metrics over hardened predictions.
pub fn compute_metrics(
    preds: &[MaskLabel],
    targets: &[MaskLabel],
) -> Result<MetricValues, EvalError> {
    let counts = confusion_counts(preds, targets)?;
    if counts.tp + counts.fp + counts.fn_ == 0 {
        let vacuous = targets
            .iter()
            .filter(|t| t.class_count(LESION_CLASS) == 0)
            .count();
        log::warn!(
            "metrics are vacuous: no lesion pixels in predictions or targets \
             ({vacuous} lesion-free slices); reporting 1.0 by the 0/0 convention"
        );
    }
    Ok(counts.metrics())
}

/// Per-pixel argmax; ties break toward the lower class index (background
/// first), matching the pseudo-label hardening rule.
pub fn harden_prediction<F: NdFloat>(pred: &SoftPrediction<F>) -> MaskLabel {
    let (c, h, w) = pred.dim();
    let mut labels = Array2::<u8>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut best = 0usize;
            let mut best_v = pred.probs()[(0, i, j)];
            for ci in 1..c {
                let v = pred.probs()[(ci, i, j)];
                if v > best_v {
                    best_v = v;
                    best = ci;
                }
            }
            labels[(i, j)] = best as u8;
        }
    }
    MaskLabel::new(labels, c).expect("argmax yields valid classes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn mask(rows: &[&[u8]]) -> MaskLabel {
        let h = rows.len();
        let w = rows[0].len();
        MaskLabel::new(Array2::from_shape_fn((h, w), |(i, j)| rows[i][j]), 2).unwrap()
    }

    #[test]
    fn perfect_agreement_gives_all_ones() {
        let m = mask(&[&[1, 0], &[0, 1]]);
        let v = compute_metrics(&[m.clone()], &[m]).unwrap();
        assert_eq!(
            (v.iou, v.dice, v.recall, v.precision),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn constructed_confusion_example() {
        // TP=2, FP=1, FN=1 on a 2x2 grid
        let pred = mask(&[&[1, 1], &[1, 0]]);
        let target = mask(&[&[1, 1], &[0, 1]]);
        let v = compute_metrics(&[pred], &[target]).unwrap();
        assert_eq!(v.iou, 0.5);
        assert!((v.dice - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.precision - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn vacuous_all_background_is_one_by_convention() {
        let m = mask(&[&[0, 0], &[0, 0]]);
        let v = compute_metrics(&[m.clone()], &[m]).unwrap();
        assert_eq!(
            (v.iou, v.dice, v.recall, v.precision),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn dice_iou_identity_holds() {
        let pred = mask(&[&[1, 1, 0], &[1, 0, 0], &[0, 0, 1]]);
        let target = mask(&[&[1, 0, 0], &[1, 1, 0], &[0, 0, 0]]);
        let v = compute_metrics(&[pred], &[target]).unwrap();
        let expect = 2.0 * v.iou / (1.0 + v.iou);
        assert!((v.dice - expect).abs() < 1e-12);
    }

    #[test]
    fn swapping_pred_and_target_swaps_recall_precision() {
        let a = mask(&[&[1, 1, 0], &[0, 0, 0], &[0, 1, 0]]);
        let b = mask(&[&[1, 0, 0], &[0, 1, 0], &[0, 1, 1]]);
        let ab = compute_metrics(&[a.clone()], &[b.clone()]).unwrap();
        let ba = compute_metrics(&[b], &[a]).unwrap();
        assert_eq!(ab.iou, ba.iou);
        assert_eq!(ab.dice, ba.dice);
        assert_eq!(ab.recall, ba.precision);
        assert_eq!(ab.precision, ba.recall);
    }

    #[test]
    fn harden_matches_manual_argmax_and_breaks_ties_down() {
        let probs = Array3::from_shape_vec(
            (2, 2, 2),
            vec![
                0.6, 0.5, // class 0 row 0
                0.2, 0.9, // class 0 row 1
                0.4, 0.5, // class 1 row 0
                0.8, 0.1, // class 1 row 1
            ],
        )
        .unwrap();
        let pred = SoftPrediction::<f64>::new(probs).unwrap();
        let hard = harden_prediction(&pred);
        assert_eq!(hard.labels()[(0, 0)], 0);
        assert_eq!(hard.labels()[(0, 1)], 0); // tie 0.5 vs 0.5 -> background
        assert_eq!(hard.labels()[(1, 0)], 1);
        assert_eq!(hard.labels()[(1, 1)], 0);
    }

    #[test]
    fn shape_mismatch_names_the_slice() {
        let a = mask(&[&[0, 0], &[0, 0]]);
        let b = mask(&[&[0, 0, 0], &[0, 0, 0]]);
        let err = compute_metrics(&[a.clone(), a.clone()], &[a, b]).unwrap_err();
        assert!(err.to_string().contains("slice 1"), "{err}");
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(compute_metrics(&[], &[]).is_err());
    }
}

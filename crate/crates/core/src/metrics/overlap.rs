//! Voxel-set overlap scores.

use serde::Serialize;

use crate::error::{Result, VastError};
use crate::volume::MaskVolume;

/// Overlap between a reference set `T` and a prediction `P`. Scores whose
/// denominator is empty are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapScores {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn scores(&self) -> OverlapScores {
        let Confusion { tp, fp, fn_, tn } = *self;
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // 2pr/(p+r) reduces to the count form, which is exact in the counts
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => ratio(2 * tp, 2 * tp + fp + fn_).or(Some(0.0)),
            _ => None,
        };
        OverlapScores {
            accuracy: (tp + tn) as f64 / (tp + fp + fn_ + tn).max(1) as f64,
            precision,
            recall,
            f1,
            dice: ratio(2 * tp, 2 * tp + fp + fn_),
            jaccard: ratio(tp, tp + fp + fn_),
        }
    }
}

/// A static mask is compared against every frame of a per-frame one.
pub fn confusion(truth: &MaskVolume, pred: &MaskVolume) -> Result<Confusion> {
    if truth.grid != pred.grid {
        return Err(VastError::ShapeMismatch {
            what: "mask grid".into(),
            expected: truth.grid.len(),
            found: pred.grid.len(),
        });
    }
    let frames = truth.frames.max(pred.frames);
    if !(truth.is_static() || pred.is_static() || truth.frames == pred.frames) {
        return Err(VastError::ShapeMismatch { what: "mask frames".into(), expected: truth.frames, found: pred.frames });
    }
    let mut c = Confusion::default();
    for t in 0..frames {
        for i in 0..truth.grid.len() {
            match (truth.at(i, t), pred.at(i, t)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

pub fn overlap_scores(truth: &MaskVolume, pred: &MaskVolume) -> Result<OverlapScores> {
    Ok(confusion(truth, pred)?.scores())
}

//! Frame-level multi-label scoring.
//!
//! Every valid (class, frame) cell is one binary decision. Counts are pooled
//! over all cells (micro averaging); per-class and macro figures are reported
//! alongside.

mod figures;
mod mlcm;
mod report;

use serde::{Deserialize, Serialize};

use crate::dataset::{FrameLabelMatrix, IptClass, N_CLASSES};
use crate::error::{Error, Result};

pub use figures::{mlcm_heatmap, piano_roll};
pub use mlcm::{mlcm, normalize_rows, MlcmMatrix, NPL, NTL};
pub use report::{evaluate_tracks, EvaluationReport, SkippedTrack, TrackEvaluation, TrackReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn scores(&self) -> Scores {
        let (p, p_undef) = ratio(self.tp, self.tp + self.fp);
        let (r, r_undef) = ratio(self.tp, self.tp + self.fn_);
        let f1_undef = p + r == 0.0;
        let f1 = if f1_undef { 0.0 } else { 2.0 * p * r / (p + r) };
        Scores {
            precision: p,
            recall: r,
            f1,
            undefined: p_undef || r_undef || f1_undef,
        }
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Precision, recall and F1. `undefined` is set when any of them hit 0/0
/// and was reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: bool,
}

/// Pooled and per-class cell counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub total: Counts,
    pub per_class: [Counts; N_CLASSES],
}

impl FrameCounts {
    pub fn add(&mut self, other: &FrameCounts) {
        self.total.add(other.total);
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(*b);
        }
    }

    pub fn metrics(&self) -> FrameMetrics {
        let per_class = self.per_class.map(|c| c.scores());
        let n = N_CLASSES as f64;
        let macro_avg = Scores {
            precision: per_class.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: per_class.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n,
            undefined: per_class.iter().any(|s| s.undefined),
        };
        FrameMetrics {
            micro: self.total.scores(),
            macro_avg,
            per_class,
            counts: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub micro: Scores,
    pub macro_avg: Scores,
    pub per_class: [Scores; N_CLASSES],
    pub counts: FrameCounts,
}

impl FrameMetrics {
    pub fn class(&self, class: IptClass) -> Scores {
        self.per_class[class.index()]
    }
}

fn check_pair(pred: &FrameLabelMatrix, truth: &FrameLabelMatrix, valid: Option<&[bool]>) -> Result<()> {
    if pred.n_frames() != truth.n_frames() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.n_frames(),
            truth.n_frames()
        )));
    }
    if let Some(v) = valid {
        if v.len() != truth.n_frames() {
            return Err(Error::Shape(format!(
                "validity mask has {} frames, labels {}",
                v.len(),
                truth.n_frames()
            )));
        }
    }
    Ok(())
}

/// Cell counts over the frames where `valid` is true (all frames if `None`).
pub fn frame_counts(pred: &FrameLabelMatrix, truth: &FrameLabelMatrix, valid: Option<&[bool]>) -> Result<FrameCounts> {
    check_pair(pred, truth, valid)?;
    let mut counts = FrameCounts::default();
    for (c, (p_row, t_row)) in pred.values().rows().into_iter().zip(truth.values().rows()).enumerate() {
        let k = &mut counts.per_class[c];
        for (t, (&p, &y)) in p_row.iter().zip(t_row.iter()).enumerate() {
            if valid.is_some_and(|v| !v[t]) {
                continue;
            }
            match (p, y) {
                (1, 1) => k.tp += 1,
                (1, 0) => k.fp += 1,
                (0, 1) => k.fn_ += 1,
                _ => {}
            }
        }
        counts.total.add(*k);
    }
    Ok(counts)
}

pub fn frame_metrics(pred: &FrameLabelMatrix, truth: &FrameLabelMatrix, valid: Option<&[bool]>) -> Result<FrameMetrics> {
    Ok(frame_counts(pred, truth, valid)?.metrics())
}

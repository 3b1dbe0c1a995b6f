//! Multi-label confusion matrix.
//!
//! Rows are true classes plus NTL (no true label); columns are predicted
//! classes plus NPL (no predicted label). Per frame, with true set `T` and
//! predicted set `P`:
//!
//! * each label in `T ∩ P` adds 1 on the diagonal;
//! * missed labels `T \ P` with spurious labels `P \ T` present: each missed
//!   label adds 1 at every spurious column;
//! * missed labels and nothing spurious: each missed label adds 1 at NPL;
//! * spurious labels and nothing missed, `T` non-empty: each spurious label
//!   adds 1 in the row of every true label;
//! * `T` empty: each predicted label adds 1 in the NTL row;
//! * both empty: 1 at (NTL, NPL).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::check_pair;
use crate::dataset::{FrameLabelMatrix, N_CLASSES};
use crate::error::Result;

/// Row index of "no true label".
pub const NTL: usize = N_CLASSES;
/// Column index of "no predicted label".
pub const NPL: usize = N_CLASSES;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlcmMatrix {
    pub counts: Array2<u64>,
}

impl Default for MlcmMatrix {
    fn default() -> Self {
        MlcmMatrix {
            counts: Array2::zeros((N_CLASSES + 1, N_CLASSES + 1)),
        }
    }
}

impl MlcmMatrix {
    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Adds one frame given membership flags of the true and predicted sets.
    pub fn add_frame(&mut self, truth: &[bool; N_CLASSES], pred: &[bool; N_CLASSES]) {
        let classes = 0..N_CLASSES;
        let hits: Vec<usize> = classes.clone().filter(|&c| truth[c] && pred[c]).collect();
        let missed: Vec<usize> = classes.clone().filter(|&c| truth[c] && !pred[c]).collect();
        let spurious: Vec<usize> = classes.clone().filter(|&c| !truth[c] && pred[c]).collect();
        let any_true = truth.iter().any(|&v| v);
        let c = &mut self.counts;
        for &h in &hits {
            c[[h, h]] += 1;
        }
        match (missed.is_empty(), spurious.is_empty()) {
            (false, false) => {
                for &m in &missed {
                    for &s in &spurious {
                        c[[m, s]] += 1;
                    }
                }
            }
            (false, true) => {
                for &m in &missed {
                    c[[m, NPL]] += 1;
                }
            }
            (true, false) if any_true => {
                for &t in &hits {
                    for &s in &spurious {
                        c[[t, s]] += 1;
                    }
                }
            }
            (true, false) => {
                for &s in &spurious {
                    c[[NTL, s]] += 1;
                }
            }
            (true, true) if !any_true => c[[NTL, NPL]] += 1,
            (true, true) => {}
        }
    }

    /// Adds every frame where `valid` is true (all frames if `None`).
    pub fn accumulate(&mut self, pred: &FrameLabelMatrix, truth: &FrameLabelMatrix, valid: Option<&[bool]>) -> Result<()> {
        check_pair(pred, truth, valid)?;
        for t in 0..truth.n_frames() {
            if valid.is_some_and(|v| !v[t]) {
                continue;
            }
            let column = |m: &FrameLabelMatrix| std::array::from_fn(|c| m.values()[[c, t]] == 1);
            self.add_frame(&column(truth), &column(pred));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MlcmMatrix) {
        self.counts += &other.counts;
    }
}

pub fn mlcm(pred: &FrameLabelMatrix, truth: &FrameLabelMatrix) -> Result<MlcmMatrix> {
    let mut m = MlcmMatrix::default();
    m.accumulate(pred, truth, None)?;
    Ok(m)
}

/// Row proportions; all-zero rows stay zero.
pub fn normalize_rows(m: &MlcmMatrix) -> Array2<f64> {
    let mut out = m.counts.mapv(|v| v as f64);
    for mut row in out.rows_mut() {
        let sum = row.sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
    out
}

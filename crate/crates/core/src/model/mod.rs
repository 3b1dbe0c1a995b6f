//! Multi-scale residual network with self-attention at the coarsest scale.
//!
//! Data flow for a `(B, 1, 88, T)` CQT batch:
//!
//! ```text
//! reshape + norm -> (B, 88, T, 1) -> pad T to a multiple of f^(branches-1)
//! branch b input = max-pool^b(stem)
//! repeat stage_count times:
//!     blocks_per_stage residual blocks per branch
//!     (last stage) attention blocks on the coarsest branch
//!     fuse: every branch rescaled to every scale, concatenated on width
//! final fuse to the finest scale -> residual block to 88 channels
//! 3x1 conv to N classes -> crop to T -> sigmoid
//! ```

mod attention;
mod checkpoint;
mod layers;
mod net;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use attention::{self_attention, SelfAttentionParams};
pub use checkpoint::{hash_json, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{input_batch, MultiScaleNet};

use crate::dataset::{FrameLabelMatrix, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::{HOP, SAMPLE_RATE};

/// Frequency bins expected by the stem.
pub const N_BINS: usize = 88;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub branch_count: usize,
    pub time_downsample_factor: usize,
    pub stage_count: usize,
    pub blocks_per_stage: usize,
    /// Residual-block output channels, finest branch first.
    pub channels_per_branch: Vec<usize>,
    /// Attention projection width; must equal the coarsest channel count.
    pub attention_dim: usize,
    pub attention_block_count: usize,
    /// Skip connections inside residual blocks.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: N_CLASSES,
            branch_count: 3,
            time_downsample_factor: 2,
            stage_count: 3,
            blocks_per_stage: 2,
            channels_per_branch: vec![16, 32, 64],
            attention_dim: 64,
            attention_block_count: 2,
            residual: true,
        }
    }
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 4] = ["default", "without_attention", "without_residual", "single_scale"];

    /// Named ablation variants of the default architecture.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ModelConfig::default();
        let cfg = match name {
            "default" => base,
            "without_attention" => ModelConfig {
                attention_block_count: 0,
                ..base
            },
            "without_residual" => ModelConfig {
                residual: false,
                ..base
            },
            "single_scale" => ModelConfig {
                branch_count: 1,
                channels_per_branch: vec![16],
                attention_dim: 16,
                attention_block_count: 0,
                ..base
            },
            other => {
                return Err(Error::config(
                    "model.preset",
                    format!("unknown preset {other:?}; expected one of {:?}", Self::PRESETS),
                ))
            }
        };
        Ok(cfg)
    }

    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if self.n_classes != N_CLASSES {
            out.push(Error::config("model.n_classes", format!("must be {N_CLASSES}, got {}", self.n_classes)));
        }
        if self.branch_count == 0 {
            out.push(Error::config("model.branch_count", "must be at least 1"));
        }
        if self.time_downsample_factor < 2 {
            out.push(Error::config("model.time_downsample_factor", "must be at least 2"));
        }
        if self.stage_count == 0 {
            out.push(Error::config("model.stage_count", "must be at least 1"));
        }
        if self.blocks_per_stage == 0 {
            out.push(Error::config("model.blocks_per_stage", "must be at least 1"));
        }
        let ch = &self.channels_per_branch;
        if ch.len() != self.branch_count {
            out.push(Error::config(
                "model.channels_per_branch",
                format!("has {} entries, branch_count is {}", ch.len(), self.branch_count),
            ));
        } else if ch.iter().any(|&c| c == 0) || ch.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Error::config(
                "model.channels_per_branch",
                format!("must be positive and strictly increasing from fine to coarse, got {ch:?}"),
            ));
        }
        if self.attention_block_count > 0 {
            match ch.last() {
                Some(&c) if c != self.attention_dim => out.push(Error::config(
                    "model.attention_dim",
                    format!("must equal the coarsest channel count {c} for the residual add, got {}", self.attention_dim),
                )),
                _ if self.attention_dim == 0 => out.push(Error::config("model.attention_dim", "must be positive")),
                _ => {}
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Time lengths are padded to a multiple of this.
    pub fn time_multiple(&self) -> usize {
        self.time_downsample_factor.pow(self.branch_count.saturating_sub(1) as u32)
    }

    pub fn padded_len(&self, t: usize) -> usize {
        t.div_ceil(self.time_multiple()) * self.time_multiple()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// Per-frame class likelihoods, rows in class-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub likelihoods: Array2<f64>,
}

impl Prediction {
    pub fn new(likelihoods: Array2<f64>) -> Result<Self> {
        if likelihoods.nrows() != N_CLASSES {
            return Err(Error::Shape(format!("prediction has {} rows, expected {N_CLASSES}", likelihoods.nrows())));
        }
        if let Some(v) = likelihoods.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("likelihood {v} outside [0, 1]")));
        }
        Ok(Prediction { likelihoods })
    }

    pub fn n_frames(&self) -> usize {
        self.likelihoods.ncols()
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Entry is 1 iff the likelihood is at least `threshold`.
pub fn binarize(pred: &Prediction, threshold: f64) -> Result<FrameLabelMatrix> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!("threshold {threshold} outside (0, 1)")));
    }
    let values = pred.likelihoods.mapv(|p| u8::from(p >= threshold));
    FrameLabelMatrix::from_values(values, HOP, SAMPLE_RATE)
}

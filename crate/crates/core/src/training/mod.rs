//! Weighted binary cross-entropy training with SGD, momentum, global gradient
//! clipping and a cosine learning-rate schedule.

mod loss;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::dataset::{FrameLabelMatrix, IptClass, N_CLASSES};
use crate::error::{Error, Result};

pub use loss::weighted_bce;
pub use optim::{clip_global_norm, LrSchedule, Sgd};
pub use trainer::{train, validate, EpochLog, TrainOutcome, LOG_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub momentum: f64,
    pub initial_lr: f64,
    pub batch_size: usize,
    pub grad_clip_l2: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub seed: u64,
    /// Upper clamp of the class weights.
    pub max_class_weight: f64,
    /// Weight of the new batch statistics in the running averages.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            momentum: 0.9,
            initial_lr: 0.01,
            batch_size: 10,
            grad_clip_l2: 3.0,
            lr_schedule: LrSchedule::Cosine,
            epochs: 100,
            seed: 0,
            max_class_weight: 20.0,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: String| {
            if !ok {
                out.push(Error::config(format!("train.{field}"), msg));
            }
        };
        check((0.0..1.0).contains(&self.momentum), "momentum", format!("{} is outside [0, 1)", self.momentum));
        check(self.initial_lr > 0.0 && self.initial_lr.is_finite(), "initial_lr", format!("{} is not positive", self.initial_lr));
        check(self.batch_size > 0, "batch_size", "must be positive".into());
        check(self.grad_clip_l2 > 0.0, "grad_clip_l2", format!("{} is not positive", self.grad_clip_l2));
        check(self.epochs > 0, "epochs", "must be positive".into());
        check(self.max_class_weight >= 1.0, "max_class_weight", format!("{} is below 1", self.max_class_weight));
        check(
            self.bn_momentum > 0.0 && self.bn_momentum <= 1.0,
            "bn_momentum",
            format!("{} is outside (0, 1]", self.bn_momentum),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Positive-class weights, one per class in index order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: [f64; N_CLASSES],
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights { w: [1.0; N_CLASSES] }
    }

    pub fn get(&self, class: IptClass) -> f64 {
        self.w[class.index()]
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(1.0, f64::max)
    }
}

/// `w_c = clamp(neg_c / pos_c, 1, w_max)` over all frames of `labels`.
pub fn class_weights(labels: &[FrameLabelMatrix], w_max: f64) -> Result<ClassWeights> {
    let mut pos = [0u64; N_CLASSES];
    let mut frames = 0u64;
    for m in labels {
        frames += m.n_frames() as u64;
        for (c, row) in m.values().rows().into_iter().enumerate() {
            pos[c] += row.iter().map(|&v| u64::from(v)).sum::<u64>();
        }
    }
    let missing: Vec<&str> = IptClass::ALL.iter().filter(|c| pos[c.index()] == 0).map(|c| c.name()).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "no positive training frames for: {}",
            missing.join(", ")
        )));
    }
    Ok(ClassWeights {
        w: std::array::from_fn(|c| ((frames - pos[c]) as f64 / pos[c] as f64).clamp(1.0, w_max)),
    })
}

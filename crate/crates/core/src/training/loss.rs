use super::ClassWeights;
use crate::dataset::{FrameLabelMatrix, N_CLASSES};
use crate::error::{Error, Result};
use crate::model::Prediction;

const EPS: f64 = 1e-7;

/// Mean over valid (class, frame) cells of
/// `-(w_c * y * ln p + (1 - y) * ln(1 - p))`, with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. Training evaluates the same expression from logits.
pub fn weighted_bce(pred: &Prediction, target: &FrameLabelMatrix, weights: &ClassWeights, valid: &[bool]) -> Result<f64> {
    let t = target.n_frames();
    if pred.n_frames() != t || valid.len() != t {
        return Err(Error::Shape(format!(
            "loss inputs disagree: {} predicted frames, {t} target frames, mask of {}",
            pred.n_frames(),
            valid.len()
        )));
    }
    if pred.likelihoods.iter().any(|p| p.is_nan()) {
        return Err(Error::Numeric("NaN likelihood in loss input".into()));
    }
    let n_valid = valid.iter().filter(|v| **v).count();
    if n_valid == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for c in 0..N_CLASSES {
        let w = weights.w[c];
        for (f, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
            let p = pred.likelihoods[[c, f]].clamp(EPS, 1.0 - EPS);
            sum -= if target.values()[[c, f]] == 1 { w * p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(sum / (n_valid * N_CLASSES) as f64)
}

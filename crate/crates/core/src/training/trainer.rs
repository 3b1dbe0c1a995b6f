use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_weights, clip_global_norm, ClassWeights, Sgd, TrainConfig};
use crate::dataset::N_CLASSES;
use crate::error::{Error, Result};
use crate::evaluation::{frame_counts, FrameCounts, FrameMetrics, Scores};
use crate::model::{binarize, input_batch, save_checkpoint, Checkpoint, MultiScaleNet, DEFAULT_THRESHOLD};
use crate::nn::{Graph, Mode};
use crate::pipeline::{predict_examples, ClipExample};

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_precision,val_recall,val_f1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Rate of the epoch's last step.
    pub lr: f64,
    /// Mean of the step losses.
    pub train_loss: f64,
    pub val: Scores,
    pub step_losses: Vec<f64>,
    /// Largest gradient norm after clipping.
    pub max_clipped_norm: f64,
}

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.val.precision, self.val.recall, self.val.f1
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation F1.
    pub best: MultiScaleNet,
    pub best_epoch: usize,
    pub best_f1: f64,
    /// Parameters after the final step.
    pub last: MultiScaleNet,
    pub logs: Vec<EpochLog>,
    pub weights: ClassWeights,
    pub steps: usize,
}

/// Micro-averaged frame metrics of `net` on the valid frames of `examples`.
pub fn validate(net: &MultiScaleNet, examples: &[ClipExample], batch_size: usize) -> Result<FrameMetrics> {
    let refs: Vec<&ClipExample> = examples.iter().collect();
    let preds = predict_examples(net, &refs, batch_size)?;
    let mut counts = FrameCounts::default();
    for (e, p) in examples.iter().zip(&preds) {
        counts.add(&frame_counts(&binarize(p, DEFAULT_THRESHOLD)?, &e.labels, Some(&e.valid))?);
    }
    Ok(counts.metrics())
}

struct RunFiles {
    log: PathBuf,
    best: PathBuf,
    last: PathBuf,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let ckpt = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let log = dir.join("train_log.csv");
        std::fs::write(&log, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&log, e))?;
        Ok(RunFiles {
            log,
            best: ckpt.join("best.json"),
            last: ckpt.join("last.json"),
        })
    }

    fn append(&self, line: &str) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.log).map_err(|e| Error::io(&self.log, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&self.log, e))
    }
}

fn batch_tensors(batch: &[&ClipExample]) -> Result<(ndarray::ArrayD<f64>, Array3<f64>, Array2<bool>)> {
    let views: Vec<_> = batch.iter().map(|e| e.features.view()).collect();
    let input = input_batch(&views)?;
    let t = batch[0].n_frames();
    if let Some(e) = batch.iter().find(|e| e.n_frames() != t || e.valid.len() != t || e.features.ncols() != t) {
        return Err(Error::Shape(format!("clip {} @ {} s does not have {t} frames", e.source_id, e.start_offset)));
    }
    let targets = Array3::from_shape_fn((batch.len(), N_CLASSES, t), |(b, c, f)| f64::from(batch[b].labels.values()[[c, f]]));
    let mask = Array2::from_shape_fn((batch.len(), t), |(b, f)| batch[b].valid[f]);
    Ok((input, targets, mask))
}

/// Runs the full schedule. With `run_dir`, writes `train_log.csv` (one line
/// per epoch) and `checkpoints/{best,last}.json`.
pub fn train(
    mut net: MultiScaleNet,
    train: &[ClipExample],
    valid: &[ClipExample],
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Validation(format!(
            "training needs clips in both splits ({} train, {} validation)",
            train.len(),
            valid.len()
        )));
    }
    let label_spans: Vec<_> = train
        .iter()
        .map(|e| e.labels.slice_frames(0, e.valid.iter().take_while(|v| **v).count()))
        .collect();
    let weights = class_weights(&label_spans, cfg.max_class_weight)?;
    log::info!("class weights {:?}", weights.w);

    let files = run_dir.map(RunFiles::create).transpose()?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, MultiScaleNet)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut step_losses = Vec::with_capacity(steps_per_epoch);
        let mut max_clipped_norm: f64 = 0.0;
        let mut lr = cfg.initial_lr;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&ClipExample> = idx.iter().map(|&i| &train[i]).collect();
            let (input, targets, mask) = batch_tensors(&batch)?;
            lr = cfg.lr_schedule.lr_at(cfg.initial_lr, step, total_steps);
            let (loss, mut grads, stats) = {
                let mut g = Graph::new(net.params(), Mode::Train);
                let x = g.input(input);
                let z = net.forward(&mut g, x)?;
                let l = g
                    .weighted_bce_with_logits(z, &targets, mask.view(), &weights.w)
                    .map_err(|e| diverged(&files, epoch, step, &e.to_string()))?;
                let loss = g.value(l)[[]];
                if !loss.is_finite() {
                    return Err(diverged(&files, epoch, step, &format!("loss is {loss}")));
                }
                let grads = g.backward(l)?;
                (loss, grads, g.take_batch_stats())
            };
            if !grads.is_finite() {
                return Err(diverged(&files, epoch, step, "non-finite gradient"));
            }
            clip_global_norm(&mut grads, cfg.grad_clip_l2);
            max_clipped_norm = max_clipped_norm.max(grads.global_norm());
            opt.step(net.params_mut(), &grads, lr);
            net.update_running_stats(&stats, cfg.bn_momentum);
            step_losses.push(loss);
            step += 1;
        }
        let val = validate(&net, valid, cfg.batch_size)?.micro;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: step_losses.iter().sum::<f64>() / step_losses.len() as f64,
            val,
            step_losses,
            max_clipped_norm,
        };
        log::info!("epoch {epoch}: loss {:.5}, validation F1 {:.4}", entry.train_loss, val.f1);
        let improved = best.as_ref().is_none_or(|(_, f1, _)| val.f1 > *f1);
        if let Some(files) = &files {
            files.append(&entry.csv_line())?;
            save_checkpoint(&files.last, &Checkpoint::new(&net, Some(epoch), Some(val.f1)))?;
            if improved {
                save_checkpoint(&files.best, &Checkpoint::new(&net, Some(epoch), Some(val.f1)))?;
            }
        }
        if improved {
            best = Some((epoch, val.f1, MultiScaleNet::from_params(net.config().clone(), net.params().clone())?));
        }
        logs.push(entry);
    }
    let (best_epoch, best_f1, best_net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        best_f1,
        last: net,
        logs,
        weights,
        steps: step,
    })
}

fn diverged(files: &Option<RunFiles>, epoch: usize, step: usize, what: &str) -> Error {
    let fallback = match files {
        Some(f) if f.last.exists() => format!("; last good checkpoint: {}", f.last.display()),
        _ => String::new(),
    };
    Error::Numeric(format!("training diverged at epoch {epoch}, step {step}: {what}{fallback}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FrameLabelMatrix;
    use crate::features::{HOP, SAMPLE_RATE};
    use crate::model::ModelConfig;
    use crate::training::LrSchedule;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels_per_branch: vec![4, 8, 16],
            attention_dim: 16,
            ..ModelConfig::default()
        }
    }

    /// Clips whose class c is on exactly where bin 10 * c carries energy.
    fn examples(n: usize, t: usize, seed: u64) -> Vec<ClipExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut labels = FrameLabelMatrix::zeros(t, HOP, SAMPLE_RATE);
                let mut features = Array2::from_shape_fn((88, t), |_| rng.random_range(0.0..0.05f32));
                for c in 0..N_CLASSES {
                    let start = rng.random_range(0..t / 2);
                    for f in start..start + t / 3 {
                        labels.set(crate::dataset::IptClass::from_index(c).unwrap(), f, true);
                        features[[10 * c + 3, f]] += 1.0;
                    }
                }
                let valid_len = if i % 3 == 0 { t - 5 } else { t };
                ClipExample {
                    source_id: format!("c{i}"),
                    start_offset: 0.0,
                    features,
                    labels,
                    valid: (0..t).map(|f| f < valid_len).collect(),
                }
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 3, seed: 4, ..TrainConfig::default() }
    }

    #[test]
    fn runs_are_reproducible_and_clipped() {
        let data = examples(7, 32, 1);
        let run = || train(MultiScaleNet::new(tiny(), 2).unwrap(), &data[..5], &data[5..], &cfg(2), None).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.steps, 4);
        for log in &a.logs {
            assert_eq!(log.step_losses.len(), 2);
            assert!(log.max_clipped_norm <= 3.0 + 1e-6);
        }
        assert_eq!(a.last.params(), b.last.params());
    }

    #[test]
    fn seed_changes_batch_order() {
        let data = examples(7, 32, 1);
        let mut other = cfg(1);
        other.seed = 5;
        let a = train(MultiScaleNet::new(tiny(), 2).unwrap(), &data[..5], &data[5..], &cfg(1), None).unwrap();
        let b = train(MultiScaleNet::new(tiny(), 2).unwrap(), &data[..5], &data[5..], &other, None).unwrap();
        assert_ne!(a.logs[0].step_losses, b.logs[0].step_losses);
    }

    #[test]
    fn run_directory_contents() {
        let dir = tempfile::tempdir().unwrap();
        let data = examples(4, 32, 3);
        let out = train(MultiScaleNet::new(tiny(), 0).unwrap(), &data[..3], &data[3..], &cfg(2), Some(dir.path())).unwrap();
        let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], out.logs[0].csv_line());
        let best = crate::model::load_checkpoint(&dir.path().join("checkpoints/best.json"), Some(&tiny())).unwrap();
        assert_eq!(best.epoch, Some(out.best_epoch));
        assert!(dir.path().join("checkpoints/last.json").exists());
    }

    #[test]
    fn final_step_uses_zero_rate() {
        let data = examples(4, 32, 3);
        let out = train(MultiScaleNet::new(tiny(), 0).unwrap(), &data[..3], &data[3..], &cfg(3), None).unwrap();
        assert!(out.logs.last().unwrap().lr.abs() < 1e-12);
        let constant = TrainConfig { lr_schedule: LrSchedule::Constant, ..cfg(1) };
        let out = train(MultiScaleNet::new(tiny(), 0).unwrap(), &data[..3], &data[3..], &constant, None).unwrap();
        assert_eq!(out.logs[0].lr, 0.01);
    }

    #[test]
    fn padded_frames_do_not_change_validation_metrics() {
        let net = MultiScaleNet::new(tiny(), 6).unwrap();
        let mut data = examples(2, 32, 9);
        let before = validate(&net, &data, 2).unwrap();
        // Flip every label on invalid frames: nothing may move.
        for e in &mut data {
            for f in 0..e.n_frames() {
                if !e.valid[f] {
                    for c in crate::dataset::IptClass::ALL {
                        let v = e.labels.get(c, f);
                        e.labels.set(c, f, !v);
                    }
                }
            }
        }
        assert_eq!(validate(&net, &data, 2).unwrap(), before);
    }

    #[test]
    fn rejects_empty_splits_and_bad_config() {
        let data = examples(2, 32, 0);
        let net = || MultiScaleNet::new(tiny(), 0).unwrap();
        assert!(train(net(), &data, &[], &cfg(1), None).is_err());
        let bad = TrainConfig { initial_lr: -1.0, ..cfg(1) };
        assert!(matches!(train(net(), &data[..1], &data[1..], &bad, None), Err(Error::Config { .. })));
    }

    #[test]
    fn divergence_aborts_with_a_numeric_error() {
        let mut data = examples(3, 32, 0);
        data[0].features[[0, 0]] = f32::NAN;
        let cfg = TrainConfig { batch_size: 3, ..cfg(1) };
        let err = train(MultiScaleNet::new(tiny(), 0).unwrap(), &data[..2], &data[2..], &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }
}

use ndarray::{s, ArrayD, ArrayView2, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::AttentionBlock;
use super::layers::{Conv, Init, Norm, ResidualBlock, Rescaler};
use super::{ModelConfig, Prediction, N_BINS};
use crate::error::{Error, Result};
use crate::features::CqtSpectrogram;
use crate::nn::{sigmoid, BatchStats, Graph, Mode, ParamStore, Var};

#[derive(Clone, Debug)]
struct Stage {
    /// `blocks[branch][k]`.
    blocks: Vec<Vec<ResidualBlock>>,
    attention: Vec<AttentionBlock>,
    /// `fuse[target][source]`; empty for the last stage.
    fuse: Vec<Vec<Rescaler>>,
}

#[derive(Clone, Debug)]
pub struct MultiScaleNet {
    config: ModelConfig,
    params: ParamStore,
    stem: Norm,
    stages: Vec<Stage>,
    final_fuse: Vec<Rescaler>,
    head_block: ResidualBlock,
    head: Conv,
}

/// Stacks equally long `88 x T` spectrograms into a `(B, 1, 88, T)` tensor.
pub fn input_batch(specs: &[ArrayView2<'_, f32>]) -> Result<ArrayD<f64>> {
    let first = specs.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (f, t) = first.dim();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[specs.len(), 1, f, t]));
    for (i, s) in specs.iter().enumerate() {
        if s.dim() != (f, t) {
            return Err(Error::Shape(format!("batch item {i} is {:?}, expected {:?}", s.dim(), (f, t))));
        }
        out.slice_mut(s![i, 0, .., ..]).assign(&s.mapv(f64::from));
    }
    Ok(out)
}

/// Concatenates same-scale maps along width.
pub fn fuse(g: &mut Graph<'_>, maps: &[Var]) -> Result<Var> {
    g.concat_width(maps)
}

impl MultiScaleNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let nb = config.branch_count;
        let ch = config.channels_per_branch.clone();
        let f = config.time_downsample_factor;
        let stem = Norm::new(&mut init, "stem.norm", N_BINS);
        let mut stages = Vec::with_capacity(config.stage_count);
        for s in 0..config.stage_count {
            let width = if s == 0 { 1 } else { nb };
            let blocks = (0..nb)
                .map(|b| {
                    (0..config.blocks_per_stage)
                        .map(|k| {
                            let (c_in, w) = match (s, k) {
                                (0, 0) => (N_BINS, width),
                                (_, 0) => (ch[b], width),
                                _ => (ch[b], 1),
                            };
                            ResidualBlock::new(
                                &mut init,
                                &format!("stage{s}.branch{b}.block{k}"),
                                c_in,
                                ch[b],
                                w,
                                config.residual,
                            )
                        })
                        .collect()
                })
                .collect();
            let last = s + 1 == config.stage_count;
            let attention = if last {
                (0..config.attention_block_count)
                    .map(|k| AttentionBlock::new(&mut init, &format!("stage{s}.attention{k}"), config.attention_dim))
                    .collect()
            } else {
                Vec::new()
            };
            let fuse = if last {
                Vec::new()
            } else {
                (0..nb)
                    .map(|t| {
                        (0..nb)
                            .map(|src| {
                                Rescaler::new(&mut init, &format!("stage{s}.fuse{src}to{t}"), (src, ch[src]), (t, ch[t]), f)
                            })
                            .collect()
                    })
                    .collect()
            };
            stages.push(Stage {
                blocks,
                attention,
                fuse,
            });
        }
        let final_fuse = (0..nb)
            .map(|src| Rescaler::new(&mut init, &format!("final.fuse{src}"), (src, ch[src]), (0, ch[0]), f))
            .collect();
        let head_block = ResidualBlock::new(&mut init, "final.block", ch[0], N_BINS, nb, config.residual);
        let head = Conv::new(&mut init, "head", N_BINS, config.n_classes, 3, 1, true);
        drop(init);
        Ok(MultiScaleNet {
            config,
            params: store,
            stem,
            stages,
            final_fuse,
            head_block,
            head,
        })
    }

    /// Rebuilds the network around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut net = MultiScaleNet::new(config, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        for id in net.params.ids() {
            let (want, got) = (net.params.name(id), params.name(id));
            if want != got || net.params.get(id).shape() != params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {want} {:?} does not match stored {got} {:?}",
                    net.params.get(id).shape(),
                    params.get(id).shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `(B, 1, 88, T)` to normalized `(B, 88, T, 1)`.
    pub fn stem(&self, g: &mut Graph<'_>, input: Var) -> Result<Var> {
        let (b, t) = match *g.shape(input) {
            [b, 1, f, t] if f == N_BINS && t > 0 => (b, t),
            ref s => {
                return Err(Error::Shape(format!(
                    "network input must be (batch, 1, {N_BINS}, frames), got {s:?}"
                )))
            }
        };
        // (B, 1, F, T) and (B, F, T, 1) share a row-major layout.
        let x = g.reshape(input, &[b, N_BINS, t, 1])?;
        self.stem.apply(g, x)
    }

    /// Class logits `(B, N, T, 1)` for a `(B, 1, 88, T)` input.
    pub fn forward(&self, g: &mut Graph<'_>, input: Var) -> Result<Var> {
        let stem = self.stem(g, input)?;
        let t = g.shape(stem)[2];
        let padded = self.config.padded_len(t);
        let stem = if padded != t { g.pad_time(stem, padded)? } else { stem };

        let f = self.config.time_downsample_factor;
        let mut branches = vec![stem];
        for b in 1..self.config.branch_count {
            let prev = branches[b - 1];
            branches.push(g.max_pool_time(prev, f)?);
        }
        for stage in &self.stages {
            for (x, blocks) in branches.iter_mut().zip(&stage.blocks) {
                for block in blocks {
                    *x = block.apply(g, *x)?;
                }
            }
            if let Some(coarse) = branches.last_mut() {
                for att in &stage.attention {
                    *coarse = att.apply(g, *coarse)?;
                }
            }
            if !stage.fuse.is_empty() {
                branches = stage
                    .fuse
                    .iter()
                    .map(|row| {
                        let maps = row
                            .iter()
                            .zip(&branches)
                            .map(|(r, &x)| r.apply(g, x))
                            .collect::<Result<Vec<_>>>()?;
                        fuse(g, &maps)
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
        }
        let maps = self
            .final_fuse
            .iter()
            .zip(&branches)
            .map(|(r, &x)| r.apply(g, x))
            .collect::<Result<Vec<_>>>()?;
        let x = fuse(g, &maps)?;
        let x = self.head_block.apply(g, x)?;
        let logits = self.head.apply(g, x)?;
        g.crop_time(logits, t)
    }

    /// Inference-mode likelihoods for each batch item.
    pub fn predict_batch(&self, input: ArrayD<f64>) -> Result<Vec<Prediction>> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let x = g.input(input);
        let logits = self.forward(&mut g, x)?;
        let z = g.value(logits);
        (0..z.shape()[0])
            .map(|i| {
                let l = z.index_axis(Axis(0), i).index_axis(Axis(2), 0).mapv(sigmoid);
                Prediction::new(l.into_dimensionality().unwrap())
            })
            .collect()
    }

    pub fn predict(&self, cqt: &CqtSpectrogram) -> Result<Prediction> {
        let input = input_batch(&[cqt.magnitudes.view()])?;
        Ok(self.predict_batch(input)?.remove(0))
    }

    /// Exponential moving update of normalization running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], momentum: f64) {
        for s in stats {
            for (r, m) in self.params.get_mut(s.running_mean).iter_mut().zip(&s.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in self.params.get_mut(s.running_var).iter_mut().zip(&s.var) {
                *r = (1.0 - momentum) * *r + momentum * v;
            }
        }
    }

    /// Attention projections of the blocks on the coarsest branch.
    pub fn attention_params(&self) -> Vec<super::SelfAttentionParams> {
        self.stages
            .iter()
            .flat_map(|s| &s.attention)
            .map(|a| a.params(&self.params))
            .collect()
    }
}

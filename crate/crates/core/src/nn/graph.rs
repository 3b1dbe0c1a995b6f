//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Feature maps are 4-D `(batch, channels, time, width)` arrays. Every op
//! validates its input shapes, stores what its backward pass needs and
//! appends one node; [`Graph::backward`] walks the tape in reverse.

use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn};

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

/// Node handle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running statistics are updated.
    Train,
    /// Running statistics; the graph is a pure function of parameters and input.
    Eval,
}

/// Normalization statistics observed in one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad_t: usize,
        cols: Array2<f64>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: Var,
        stride: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: ArrayD<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    ConcatWidth(Vec<Var>),
    PadTime(Var),
    CropTime(Var),
    Reshape(Var),
    Attention {
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        caches: Vec<AttentionCache>,
    },
    Loss {
        logits: Var,
        dlogits: ArrayD<f64>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    batch_stats: Vec<BatchStats>,
    // Nodes copied from an earlier graph by `resume`, consumed in order.
    replay_len: usize,
    cursor: usize,
}

fn dims4(a: &ArrayD<f64>, what: &str) -> Result<[usize; 4]> {
    match *a.shape() {
        [b, c, t, w] => Ok([b, c, t, w]),
        ref s => Err(Error::Shape(format!("{what}: expected a 4-D feature map, got {s:?}"))),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Graph {
            params,
            mode,
            nodes: Vec::new(),
            batch_stats: Vec::new(),
            replay_len: 0,
            cursor: 0,
        }
    }

    /// A graph whose first `upto` nodes are copies of `from`'s values.
    /// Rebuilding the same forward pass then recomputes only the later
    /// nodes, which is exact when nothing in the prefix reads a parameter
    /// that changed (see [`Graph::first_use`]). Copied nodes are leaves, so
    /// the result is for evaluation only: gradients and batch statistics
    /// cover the recomputed suffix alone.
    pub fn resume(from: &Graph<'_>, params: &'p ParamStore, upto: usize) -> Self {
        let nodes: Vec<Node> = from.nodes[..upto.min(from.nodes.len())]
            .iter()
            .enumerate()
            .map(|(i, node)| match node.op {
                Op::Param(id) => Node { value: ArrayD::zeros(IxDyn(&[0])), op: Op::Param(id) },
                _ => Node { value: from.value(Var(i)).clone(), op: Op::Input },
            })
            .collect();
        Graph {
            params,
            mode: from.mode,
            replay_len: nodes.len(),
            nodes,
            batch_stats: Vec::new(),
            cursor: 0,
        }
    }

    /// Index of the first node that reads parameter `id`; every earlier node
    /// is independent of it.
    pub fn first_use(&self, id: ParamId) -> Option<usize> {
        self.nodes.iter().position(|n| matches!(n.op, Op::Param(p) if p == id))
    }

    /// Hands out the next `n` copied nodes while replaying a prefix.
    fn replayed(&mut self, n: usize) -> Option<Var> {
        if self.cursor + n <= self.replay_len {
            self.cursor += n;
            return Some(Var(self.cursor - 1));
        }
        if self.replay_len > 0 {
            self.nodes.truncate(self.cursor);
            self.replay_len = 0;
        }
        None
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        let node = &self.nodes[v.0];
        match node.op {
            // Parameters are read from the store rather than copied onto the tape.
            Op::Param(id) => self.params.get(id),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        if let Some(v) = self.replayed(1) {
            return v;
        }
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.replayed(1) {
            return v;
        }
        self.push(ArrayD::zeros(IxDyn(&[0])), Op::Param(id))
    }

    /// Statistics gathered by training-mode normalization layers so far.
    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.batch_stats)
    }

    /// 2-D convolution with kernel `(kt, kw)`, stride 1, zero padding `pad_t`
    /// on the time axis only. `x: (B, Ci, T, W)`, `w: (Co, Ci, kt, kw)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad_t: usize) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, ci, t, wi] = dims4(self.value(x), "conv2d input")?;
        let [co, ci2, kt, kw] = dims4(self.value(w), "conv2d weight")?;
        if ci != ci2 {
            return Err(Error::Shape(format!("conv2d: input has {ci} channels, kernel expects {ci2}")));
        }
        if wi < kw || t + 2 * pad_t < kt {
            return Err(Error::Shape(format!(
                "conv2d: kernel ({kt}, {kw}) larger than padded input ({}, {wi})",
                t + 2 * pad_t
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(Error::Shape(format!("conv2d: bias shape {:?}, expected [{co}]", self.shape(b))));
            }
        }
        let to = t + 2 * pad_t - kt + 1;
        let wo = wi - kw + 1;
        let k = ci * kt * kw;
        let n = bn * to * wo;

        let xv = self.value(x).as_standard_layout();
        let xs = xv.as_slice().unwrap();
        let geom = ConvGeom { bn, ci, t, wi, kt, kw, to, wo, pad_t };
        let mut cols = Array2::<f64>::zeros((k, n));
        geom.im2col(xs, cols.as_slice_mut().unwrap());
        let wmat = self.value(w).view().into_shape_with_order((co, k)).unwrap().into_dimensionality::<Ix2>().unwrap();
        let mut out2 = wmat.dot(&cols);
        if let Some(b) = b {
            let bias = self.value(b);
            for (mut row, add) in out2.rows_mut().into_iter().zip(bias.iter()) {
                row += *add;
            }
        }
        // (Co, B, To*Wo) to (B, Co, To, Wo).
        let out = out2
            .into_shape_with_order((co, bn, to * wo))
            .unwrap()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[bn, co, to, wo]))
            .unwrap();
        Ok(self.push(out, Op::Conv2d { x, w, b, pad_t, cols }))
    }

    /// Transposed convolution along time with kernel `(k, 1)`.
    /// `x: (B, Ci, T, W)`, `w: (Ci, Co, k)`; output time
    /// `(T - 1) * stride - 2 * pad + k + output_padding`.
    pub fn conv_transpose_time(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, ci, t, wd] = dims4(self.value(x), "conv_transpose input")?;
        let (ci2, co, k) = match *self.shape(w) {
            [a, b, c] => (a, b, c),
            ref s => return Err(Error::Shape(format!("conv_transpose weight must be 3-D, got {s:?}"))),
        };
        if ci != ci2 {
            return Err(Error::Shape(format!("conv_transpose: input has {ci} channels, kernel expects {ci2}")));
        }
        if output_padding >= stride {
            return Err(Error::Shape("conv_transpose: output padding must be below the stride".into()));
        }
        let to = ((t - 1) * stride + k + output_padding)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::Shape("conv_transpose: padding exceeds output".into()))?;
        let n = bn * t * wd;
        let x2 = to_channel_matrix(self.value(x), [bn, ci, t, wd]);
        let wv = self.value(w);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[bn, co, to, wd]));
        {
            let os = out.as_slice_mut().unwrap();
            for kk in 0..k {
                let wk = wv.index_axis(Axis(2), kk).into_dimensionality::<Ix2>().unwrap();
                let yk = wk.t().dot(&x2);
                for c in 0..co {
                    let row = yk.row(c);
                    for col in 0..n {
                        let (bb, rest) = (col / (t * wd), col % (t * wd));
                        let (tt, ww) = (rest / wd, rest % wd);
                        let pos = tt * stride + kk;
                        if pos < pad || pos - pad >= to {
                            continue;
                        }
                        os[((bb * co + c) * to + pos - pad) * wd + ww] += row[col];
                    }
                }
            }
            if let Some(b) = b {
                let bv = self.value(b);
                for (i, o) in os.iter_mut().enumerate() {
                    *o += bv[(i / (to * wd)) % co];
                }
            }
        }
        Ok(self.push(out, Op::ConvTranspose { x, w, b, stride, pad }))
    }

    /// Max-pooling along time: kernel 3, padding 1, given stride.
    pub fn max_pool_time(&mut self, x: Var, stride: usize) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, c, t, wd] = dims4(self.value(x), "max_pool input")?;
        if stride == 0 || t == 0 {
            return Err(Error::Shape("max_pool: empty input or zero stride".into()));
        }
        let to = (t - 1) / stride + 1;
        let xs = self.value(x).as_slice().unwrap();
        let mut os = Vec::with_capacity(bn * c * to * wd);
        let mut argmax = Vec::with_capacity(bn * c * to * wd);
        {
            for plane in 0..bn * c {
                for tt in 0..to {
                    let centre = tt * stride;
                    let lo = centre.saturating_sub(1);
                    let hi = (centre + 1).min(t - 1);
                    for ww in 0..wd {
                        let mut best = (plane * t + lo) * wd + ww;
                        for ti in lo + 1..=hi {
                            let idx = (plane * t + ti) * wd + ww;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                        os.push(xs[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[bn, c, to, wd]), os).unwrap();
        Ok(self.push(out, Op::MaxPool { x, stride, argmax }))
    }

    /// Per-channel normalization over batch, time and width.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        if let Some(v) = self.replayed(3) {
            return Ok(v);
        }
        let [bn, c, t, wd] = dims4(self.value(x), "batch_norm input")?;
        if self.params.get(gamma).shape() != [c] {
            return Err(Error::Shape(format!(
                "batch_norm: {c} channels, parameters sized {:?}",
                self.params.get(gamma).shape()
            )));
        }
        let plane = t * wd;
        let m = (bn * plane) as f64;
        let xs = self.value(x).as_slice().unwrap();
        let (mean, var, batch_stats) = match self.mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let vals = (0..bn).flat_map(|bb| {
                        let s = (bb * c + ch) * plane;
                        xs[s..s + plane].iter()
                    });
                    let mu = vals.clone().sum::<f64>() / m;
                    mean[ch] = mu;
                    var[ch] = vals.map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
                }
                (mean, var, true)
            }
            Mode::Eval => (
                self.params.get(running_mean).iter().copied().collect(),
                self.params.get(running_var).iter().copied().collect(),
                false,
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.params.get(gamma).as_slice().unwrap();
        let be = self.params.get(beta).as_slice().unwrap();
        let mut xh = Vec::with_capacity(xs.len());
        let mut os = Vec::with_capacity(xs.len());
        for (i, src) in xs.chunks_exact(plane).enumerate() {
            let ch = i % c;
            let (mu, is, ga, bt) = (mean[ch], inv_std[ch], g[ch], be[ch]);
            for v in src {
                let h = (v - mu) * is;
                xh.push(h);
                os.push(ga * h + bt);
            }
        }
        let xhat = ArrayD::from_shape_vec(IxDyn(&[bn, c, t, wd]), xh).unwrap();
        let out = ArrayD::from_shape_vec(IxDyn(&[bn, c, t, wd]), os).unwrap();
        if batch_stats {
            self.batch_stats.push(BatchStats {
                running_mean,
                running_var,
                mean,
                var,
            });
        }
        let gamma_v = self.param(gamma);
        let beta_v = self.param(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: gamma_v,
                beta: beta_v,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        if let Some(v) = self.replayed(1) {
            return v;
        }
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        if let Some(v) = self.replayed(1) {
            return v;
        }
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Concatenates feature maps along the width (last) axis.
    pub fn concat_width(&mut self, xs: &[Var]) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let [bn, c, t, _] = dims4(self.value(first), "concat input")?;
        for &x in xs {
            let [b2, c2, t2, _] = dims4(self.value(x), "concat input")?;
            if (b2, c2, t2) != (bn, c, t) {
                return Err(Error::Shape(format!(
                    "concat: maps disagree in batch/channels/time: {:?} vs {:?}",
                    self.shape(first),
                    self.shape(x)
                )));
            }
        }
        if xs.len() == 1 {
            let out = self.value(first).clone();
            return Ok(self.push(out, Op::ConcatWidth(xs.to_vec())));
        }
        let parts: Vec<(&[f64], usize)> = xs
            .iter()
            .map(|&x| (self.value(x).as_slice().unwrap(), self.shape(x)[3]))
            .collect();
        let total: usize = parts.iter().map(|p| p.1).sum();
        let rows = bn * c * t;
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (src, w) in &parts {
                data.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[bn, c, t, total]), data).unwrap();
        Ok(self.push(out, Op::ConcatWidth(xs.to_vec())))
    }

    /// Right-pads the time axis with zeros to `len` frames.
    pub fn pad_time(&mut self, x: Var, len: usize) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, c, t, wd] = dims4(self.value(x), "pad_time input")?;
        if len < t {
            return Err(Error::Shape(format!("pad_time: {len} < {t}")));
        }
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[bn, c, len, wd]));
        out.slice_axis_mut(Axis(2), (0..t).into()).assign(self.value(x));
        Ok(self.push(out, Op::PadTime(x)))
    }

    /// Keeps the first `len` frames.
    pub fn crop_time(&mut self, x: Var, len: usize) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [_, _, t, _] = dims4(self.value(x), "crop_time input")?;
        if len > t {
            return Err(Error::Shape(format!("crop_time: {len} > {t}")));
        }
        let out = self.value(x).slice_axis(Axis(2), (0..len).into()).to_owned();
        Ok(self.push(out, Op::CropTime(x)))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let out = self
            .value(x)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| Error::Shape(format!("reshape to {shape:?}: {e}")))?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Scaled dot-product self-attention over the time axis of a width-1 map.
    /// `x: (B, C, T, 1)`, projections `(C, d_k)`; output `(B, d_k, T, 1)`.
    pub fn self_attention(&mut self, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, c, t, wd] = dims4(self.value(x), "attention input")?;
        if wd != 1 {
            return Err(Error::Shape(format!("attention expects width 1, got {wd}")));
        }
        let dk = match *self.shape(wq) {
            [r, d] if r == c => d,
            ref s => return Err(Error::Shape(format!("attention: projection {s:?} for {c} channels"))),
        };
        if self.shape(wk) != [c, dk] || self.shape(wv) != [c, dk] {
            return Err(Error::Shape("attention: W_Q, W_K, W_V must share one shape".into()));
        }
        let q = self.value(wq).view().into_dimensionality::<Ix2>().unwrap();
        let k = self.value(wk).view().into_dimensionality::<Ix2>().unwrap();
        let v = self.value(wv).view().into_dimensionality::<Ix2>().unwrap();
        let xv = self.value(x);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[bn, dk, t, 1]));
        let mut caches = Vec::with_capacity(bn);
        for bb in 0..bn {
            let xb = xv
                .index_axis(Axis(0), bb)
                .index_axis(Axis(2), 0)
                .t()
                .to_owned()
                .into_dimensionality::<Ix2>()
                .unwrap();
            let cache = attention_forward(xb, q, k, v);
            out.index_axis_mut(Axis(0), bb)
                .index_axis_mut(Axis(2), 0)
                .assign(&cache.output.t());
            caches.push(cache);
        }
        Ok(self.push(out, Op::Attention { x, wq, wk, wv, caches }))
    }

    /// Class-weighted binary cross-entropy on logits, averaged over valid cells.
    ///
    /// `logits: (B, N, T, 1)`, `targets: (B, N, T)` in {0, 1}, `mask: (B, T)`.
    /// A cell contributes `w_c * y * softplus(-z) + (1 - y) * softplus(z)`,
    /// i.e. `-[w_c y log p + (1 - y) log(1 - p)]` with `p = sigmoid(z)`.
    pub fn weighted_bce_with_logits(
        &mut self,
        logits: Var,
        targets: &ndarray::Array3<f64>,
        mask: ArrayView2<'_, bool>,
        weights: &[f64],
    ) -> Result<Var> {
        if let Some(v) = self.replayed(1) {
            return Ok(v);
        }
        let [bn, nc, t, wd] = dims4(self.value(logits), "loss logits")?;
        if wd != 1 || targets.dim() != (bn, nc, t) || mask.dim() != (bn, t) || weights.len() != nc {
            return Err(Error::Shape(format!(
                "loss: logits {:?}, targets {:?}, mask {:?}, {} weights",
                self.shape(logits),
                targets.dim(),
                mask.dim(),
                weights.len()
            )));
        }
        let z = self.value(logits);
        let count = mask.iter().filter(|m| **m).count() * nc;
        let mut total = 0.0;
        let mut grad = ArrayD::<f64>::zeros(IxDyn(&[bn, nc, t, 1]));
        if count > 0 {
            let inv = 1.0 / count as f64;
            for bb in 0..bn {
                for c in 0..nc {
                    for tt in 0..t {
                        if !mask[[bb, tt]] {
                            continue;
                        }
                        let zv = z[[bb, c, tt, 0]];
                        if !zv.is_finite() {
                            return Err(Error::Numeric(format!("non-finite logit at ({bb}, {c}, {tt})")));
                        }
                        let y = targets[[bb, c, tt]];
                        let w = weights[c];
                        total += w * y * softplus(-zv) + (1.0 - y) * softplus(zv);
                        let p = sigmoid(zv);
                        grad[[bb, c, tt, 0]] = (w * y * (p - 1.0) + (1.0 - y) * p) * inv;
                    }
                }
            }
            total *= inv;
        }
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        Ok(self.push(value, Op::Loss { logits, dlogits: grad }))
    }

    /// Distance of the current point from the nearest non-differentiable
    /// configuration: the smallest |input| of any rectifier and the smallest
    /// positive gap between the winner and a rival in any pooling window.
    /// Finite-difference checks are only meaningful when this exceeds the
    /// perturbation's effect on activations.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).iter() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool { x, stride, argmax } => {
                    let xv = self.value(*x);
                    let xs = xv.as_slice().unwrap();
                    let [_, _, t, wd] = match *xv.shape() {
                        [a, b, c, d] => [a, b, c, d],
                        _ => continue,
                    };
                    let to = node.value.shape()[2];
                    for (o, &best) in argmax.iter().enumerate() {
                        let plane = o / (to * wd);
                        let (tt, ww) = ((o / wd) % to, o % wd);
                        let centre = tt * stride;
                        let lo = centre.saturating_sub(1);
                        let hi = (centre + 1).min(t - 1);
                        for ti in lo..=hi {
                            let idx = (plane * t + ti) * wd + ww;
                            let gap = xs[best] - xs[idx];
                            // Exact ties arise from overlapping windows copying one
                            // upstream value twice; both copies move together.
                            if idx != best && gap > 0.0 {
                                margin = margin.min(gap);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Gradients of the scalar `root` with respect to every parameter it depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), 1.0));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Conv2d { x, w, b, pad_t, cols } => {
                    let [bn, ci, t, wi] = dims4(self.value(*x), "")?;
                    let [co, _, kt, kw] = dims4(self.value(*w), "")?;
                    let [_, _, to, wo] = dims4(&g, "")?;
                    let n = bn * to * wo;
                    let k = ci * kt * kw;
                    let gs = g.as_standard_layout();
                    let gs = gs.as_slice().unwrap();
                    let mut g2 = Array2::<f64>::zeros((co, n));
                    for c in 0..co {
                        let mut row = g2.row_mut(c);
                        let row = row.as_slice_mut().unwrap();
                        for bb in 0..bn {
                            let src = (bb * co + c) * to * wo;
                            row[bb * to * wo..(bb + 1) * to * wo].copy_from_slice(&gs[src..src + to * wo]);
                        }
                    }
                    if let Some(b) = b {
                        let db = g2.sum_axis(Axis(1)).into_dyn();
                        accumulate(&mut grads, *b, db);
                    }
                    let dw = g2.dot(&cols.t()).into_shape_with_order(IxDyn(&[co, ci, kt, kw])).unwrap();
                    accumulate(&mut grads, *w, dw);
                    let wmat = self.value(*w).view().into_shape_with_order((co, k)).unwrap();
                    let dcols = wmat.t().dot(&g2);
                    let geom = ConvGeom { bn, ci, t, wi, kt, kw, to, wo, pad_t: *pad_t };
                    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[bn, ci, t, wi]));
                    let dcols = dcols.as_standard_layout();
                    geom.col2im(dcols.as_slice().unwrap(), dx.as_slice_mut().unwrap());
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConvTranspose { x, w, b, stride, pad } => {
                    let [bn, ci, t, wd] = dims4(self.value(*x), "")?;
                    let (_, co, k) = match *self.shape(*w) {
                        [a, b, c] => (a, b, c),
                        _ => unreachable!(),
                    };
                    let to = g.shape()[2];
                    let n = bn * t * wd;
                    let x2 = to_channel_matrix(self.value(*x), [bn, ci, t, wd]);
                    let wv = self.value(*w);
                    let gs = g.as_standard_layout();
                    let gs = gs.as_slice().unwrap();
                    let mut dx2 = Array2::<f64>::zeros((ci, n));
                    let mut dw = ArrayD::<f64>::zeros(IxDyn(&[ci, co, k]));
                    for kk in 0..k {
                        let mut gk = Array2::<f64>::zeros((co, n));
                        for c in 0..co {
                            let mut row = gk.row_mut(c);
                            for col in 0..n {
                                let (bb, rest) = (col / (t * wd), col % (t * wd));
                                let (tt, ww) = (rest / wd, rest % wd);
                                let pos = tt * stride + kk;
                                if pos < *pad || pos - pad >= to {
                                    continue;
                                }
                                row[col] = gs[((bb * co + c) * to + pos - pad) * wd + ww];
                            }
                        }
                        let wk = wv.index_axis(Axis(2), kk).into_dimensionality::<Ix2>().unwrap();
                        dx2 += &wk.dot(&gk);
                        dw.index_axis_mut(Axis(2), kk).assign(&x2.dot(&gk.t()));
                    }
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let db = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
                        accumulate(&mut grads, *b, db);
                    }
                    accumulate(&mut grads, *x, from_channel_matrix(&dx2, [bn, ci, t, wd]));
                }
                Op::MaxPool { x, argmax, .. } => {
                    let mut dx = ArrayD::<f64>::zeros(self.value(*x).raw_dim());
                    let dxs = dx.as_slice_mut().unwrap();
                    for (gv, &src) in g.iter().zip(argmax) {
                        dxs[src] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let [bn, c, t, wd] = dims4(xhat, "")?;
                    let plane = t * wd;
                    let m = (bn * plane) as f64;
                    let gv = self.value(*gamma);
                    let gs = g.as_standard_layout();
                    let gs = gs.as_slice().unwrap();
                    let xh = xhat.as_slice().unwrap();
                    let gv = gv.as_slice().unwrap();
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for (i, (d, h)) in gs.chunks_exact(plane).zip(xh.chunks_exact(plane)).enumerate() {
                        let ch = i % c;
                        for (d, h) in d.iter().zip(h) {
                            sum_dy[ch] += d;
                            sum_dy_xhat[ch] += d * h;
                        }
                    }
                    let mut dx = ArrayD::<f64>::zeros(xhat.raw_dim());
                    for (i, ((out, d), h)) in dx
                        .as_slice_mut()
                        .unwrap()
                        .chunks_exact_mut(plane)
                        .zip(gs.chunks_exact(plane))
                        .zip(xh.chunks_exact(plane))
                        .enumerate()
                    {
                        let ch = i % c;
                        let scale = gv[ch] * inv_std[ch];
                        if *batch_stats {
                            let (a, b) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                            for ((o, d), h) in out.iter_mut().zip(d).zip(h) {
                                *o = scale * (d - a - h * b);
                            }
                        } else {
                            for (o, d) in out.iter_mut().zip(d) {
                                *o = scale * d;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, ArrayD::from_shape_vec(IxDyn(&[c]), sum_dy_xhat).unwrap());
                    accumulate(&mut grads, *beta, ArrayD::from_shape_vec(IxDyn(&[c]), sum_dy).unwrap());
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx)
                        .and(&node.value)
                        .for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0
                            }
                        });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatWidth(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let w = self.shape(x)[3];
                        let part = g.slice_axis(Axis(3), (start..start + w).into()).to_owned();
                        accumulate(&mut grads, x, part);
                        start += w;
                    }
                }
                Op::PadTime(x) => {
                    let t = self.shape(*x)[2];
                    accumulate(&mut grads, *x, g.slice_axis(Axis(2), (0..t).into()).to_owned());
                }
                Op::CropTime(x) => {
                    let mut dx = ArrayD::<f64>::zeros(self.value(*x).raw_dim());
                    let t = g.shape()[2];
                    dx.slice_axis_mut(Axis(2), (0..t).into()).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => {
                    let shape = self.shape(*x).to_vec();
                    let dx = g
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&shape))
                        .unwrap();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { x, wq, wk, wv, caches } => {
                    let [bn, c, t, _] = dims4(self.value(*x), "")?;
                    let q = self.value(*wq).view().into_dimensionality::<Ix2>().unwrap();
                    let k = self.value(*wk).view().into_dimensionality::<Ix2>().unwrap();
                    let v = self.value(*wv).view().into_dimensionality::<Ix2>().unwrap();
                    let mut dx = ArrayD::<f64>::zeros(IxDyn(&[bn, c, t, 1]));
                    let mut dq = Array2::<f64>::zeros(q.raw_dim());
                    let mut dk = Array2::<f64>::zeros(k.raw_dim());
                    let mut dv = Array2::<f64>::zeros(v.raw_dim());
                    for (bb, cache) in caches.iter().enumerate() {
                        let d_out = g.index_axis(Axis(0), bb).index_axis(Axis(2), 0).t().to_owned().into_dimensionality::<Ix2>().unwrap();
                        let grads_b = attention_backward(cache, q, k, v, d_out.view());
                        dq += &grads_b.w_q;
                        dk += &grads_b.w_k;
                        dv += &grads_b.w_v;
                        dx.index_axis_mut(Axis(0), bb)
                            .index_axis_mut(Axis(2), 0)
                            .assign(&grads_b.x.t());
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *wq, dq.into_dyn());
                    accumulate(&mut grads, *wk, dk.into_dyn());
                    accumulate(&mut grads, *wv, dv.into_dyn());
                }
                Op::Loss { logits, dlogits } => {
                    let upstream = g.iter().next().copied().unwrap_or(1.0);
                    accumulate(&mut grads, *logits, dlogits * upstream);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

/// Index bookkeeping shared by the im2col gather and its adjoint.
struct ConvGeom {
    bn: usize,
    ci: usize,
    t: usize,
    wi: usize,
    kt: usize,
    kw: usize,
    to: usize,
    wo: usize,
    pad_t: usize,
}

impl ConvGeom {
    /// Output frames `tt` whose tap `dt` lands inside the unpadded input.
    fn valid(&self, dt: usize) -> std::ops::Range<usize> {
        let lo = self.pad_t.saturating_sub(dt);
        let hi = (self.t + self.pad_t).saturating_sub(dt).min(self.to);
        lo..hi.max(lo)
    }

    /// Calls `f(col_offset, src_offset)` for every contiguous run of `wo` values.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize)) {
        let n = self.bn * self.to * self.wo;
        for c in 0..self.ci {
            for dt in 0..self.kt {
                let range = self.valid(dt);
                for dw in 0..self.kw {
                    let row = ((c * self.kt + dt) * self.kw + dw) * n;
                    for b in 0..self.bn {
                        let src_plane = (b * self.ci + c) * self.t;
                        for tt in range.clone() {
                            let src = (src_plane + tt + dt - self.pad_t) * self.wi + dw;
                            f(row + (b * self.to + tt) * self.wo, src);
                        }
                    }
                }
            }
        }
    }

    /// Width-1 maps: each tap row is a contiguous slice of the input.
    fn for_each_slice(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.bn * self.to;
        for c in 0..self.ci {
            for dt in 0..self.kt {
                let range = self.valid(dt);
                let row = (c * self.kt + dt) * n;
                for b in 0..self.bn {
                    let src = (b * self.ci + c) * self.t + range.start + dt - self.pad_t;
                    f(row + b * self.to + range.start, src, range.len());
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let wo = self.wo;
        if self.wi == 1 {
            self.for_each_slice(|d, s, len| cols[d..d + len].copy_from_slice(&x[s..s + len]));
        } else if wo == 1 {
            self.for_each_run(|d, s| cols[d] = x[s]);
        } else {
            self.for_each_run(|d, s| cols[d..d + wo].copy_from_slice(&x[s..s + wo]));
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let wo = self.wo;
        if self.wi == 1 {
            return self.for_each_slice(|d, s, len| {
                for (o, v) in dx[s..s + len].iter_mut().zip(&cols[d..d + len]) {
                    *o += v;
                }
            });
        }
        self.for_each_run(|d, s| {
            for (o, v) in dx[s..s + wo].iter_mut().zip(&cols[d..d + wo]) {
                *o += v;
            }
        });
    }
}

/// `(B, C, T, W)` to `(C, B*T*W)`.
fn to_channel_matrix(x: &ArrayD<f64>, [bn, c, t, wd]: [usize; 4]) -> Array2<f64> {
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().unwrap();
    let plane = t * wd;
    let mut m = Array2::<f64>::zeros((c, bn * plane));
    for ch in 0..c {
        let mut row = m.row_mut(ch);
        let row = row.as_slice_mut().unwrap();
        for bb in 0..bn {
            let src = (bb * c + ch) * plane;
            row[bb * plane..(bb + 1) * plane].copy_from_slice(&xs[src..src + plane]);
        }
    }
    m
}

fn from_channel_matrix(m: &Array2<f64>, [bn, c, t, wd]: [usize; 4]) -> ArrayD<f64> {
    let plane = t * wd;
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[bn, c, t, wd]));
    let os = out.as_slice_mut().unwrap();
    for ch in 0..c {
        let row = m.row(ch);
        for bb in 0..bn {
            let dst = (bb * c + ch) * plane;
            for i in 0..plane {
                os[dst + i] = row[bb * plane + i];
            }
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    /// Reduces any output to a scalar through the loss op with fixed targets.
    fn scalar_loss(g: &mut Graph<'_>, out: Var, seed: u64) -> Var {
        let n = g.value(out).len();
        let flat = g.reshape(out, &[1, n, 1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = Array3::from_shape_fn((1, n, 1), |_| f64::from(rng.random_bool(0.5)));
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let mask = Array2::from_elem((1, 1), true);
        g.weighted_bce_with_logits(flat, &targets, mask.view(), &weights).unwrap()
    }

    /// Compares analytic gradients with central differences for every
    /// trainable entry of the store.
    fn check<F>(store: &ParamStore, mode: Mode, build: F)
    where
        F: Fn(&mut Graph<'_>) -> Var,
    {
        let eval = |s: &ParamStore| {
            let mut g = Graph::new(s, mode);
            let out = build(&mut g);
            let l = scalar_loss(&mut g, out, 99);
            g.value(l)[[]]
        };
        let mut g = Graph::new(store, mode);
        let out = build(&mut g);
        let l = scalar_loss(&mut g, out, 99);
        let grads = g.backward(l).unwrap();
        let h = 1e-5;
        for id in store.trainable_ids() {
            let analytic = grads.get(id).cloned().unwrap_or_else(|| ArrayD::zeros(store.get(id).raw_dim()));
            for i in 0..store.get(id).len() {
                let mut s = store.clone();
                s.get_mut(id).as_slice_mut().unwrap()[i] += h;
                let up = eval(&s);
                s.get_mut(id).as_slice_mut().unwrap()[i] -= 2.0 * h;
                let down = eval(&s);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-4 || (a - numeric).abs() < 1e-8,
                    "{} [{i}]: analytic {a}, numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[2, 3, 5, 4], &mut rng), true);
        let w = s.add("w", randn(&[2, 3, 3, 2], &mut rng), true);
        let b = s.add("b", randn(&[2], &mut rng), true);
        let mut g = Graph::new(&s, Mode::Eval);
        let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
        let out = g.conv2d(xv, wv, Some(bv), 1).unwrap();
        let y = g.value(out);
        assert_eq!(y.shape(), &[2, 2, 5, 3]);
        let (xa, wa, ba) = (s.get(x), s.get(w), s.get(b));
        for n in 0..2 {
            for o in 0..2 {
                for t in 0..5 {
                    for c in 0..3 {
                        let mut acc = ba[o];
                        for i in 0..3 {
                            for dt in 0..3 {
                                for dw in 0..2 {
                                    let ti = t as isize + dt as isize - 1;
                                    if (0..5).contains(&ti) {
                                        acc += wa[[o, i, dt, dw]] * xa[[n, i, ti as usize, c + dw]];
                                    }
                                }
                            }
                        }
                        assert!((y[[n, o, t, c]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_transpose_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[1, 2, 4, 2], &mut rng), true);
        let w = s.add("w", randn(&[2, 3, 3], &mut rng), true);
        for (stride, pad, op) in [(2, 1, 1), (3, 0, 0), (4, 0, 1)] {
            let mut g = Graph::new(&s, Mode::Eval);
            let (xv, wv) = (g.param(x), g.param(w));
            let out = g.conv_transpose_time(xv, wv, None, stride, pad, op).unwrap();
            let y = g.value(out).clone();
            let to = 3 * stride + 3 + op - 2 * pad;
            assert_eq!(y.shape(), &[1, 3, to, 2]);
            assert_eq!(to, 4 * stride);
            let mut expect = ArrayD::<f64>::zeros(IxDyn(&[1, 3, to, 2]));
            for i in 0..2 {
                for o in 0..3 {
                    for t in 0..4 {
                        for k in 0..3 {
                            let pos = (t * stride + k) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < to {
                                for c in 0..2 {
                                    expect[[0, o, pos as usize, c]] += s.get(x)[[0, i, t, c]] * s.get(w)[[i, o, k]];
                                }
                            }
                        }
                    }
                }
            }
            assert!((&y - &expect).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn max_pool_window_and_length() {
        let mut s = ParamStore::new();
        let vals: Vec<f64> = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0];
        let x = s.add("x", ArrayD::from_shape_vec(IxDyn(&[1, 1, 7, 1]), vals).unwrap(), true);
        let mut g = Graph::new(&s, Mode::Eval);
        let xv = g.param(x);
        let p2 = g.max_pool_time(xv, 2).unwrap();
        assert_eq!(g.value(p2).iter().copied().collect::<Vec<_>>(), vec![5.0, 5.0, 4.0, 4.0]);
        let p3 = g.max_pool_time(xv, 3).unwrap();
        assert_eq!(g.value(p3).iter().copied().collect::<Vec<_>>(), vec![5.0, 3.0, 4.0]);
    }

    #[test]
    fn resumed_graph_matches_a_full_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::new();
        let w1 = s.add("w1", randn(&[3, 2, 3, 1], &mut rng), true);
        let gm = s.add("g", ArrayD::ones(IxDyn(&[3])), true);
        let bt = s.add("b", ArrayD::zeros(IxDyn(&[3])), true);
        let rm = s.add("rm", ArrayD::zeros(IxDyn(&[3])), false);
        let rv = s.add("rv", ArrayD::ones(IxDyn(&[3])), false);
        let w2 = s.add("w2", randn(&[2, 3, 3, 1], &mut rng), true);
        let input = randn(&[2, 2, 6, 1], &mut rng);
        let targets = Array3::from_shape_fn((2, 2, 6), |(b, c, t)| ((b + c + t) % 2) as f64);
        let mask = Array2::from_elem((2, 6), true);
        let run = |g: &mut Graph| {
            let x = g.input(input.clone());
            let w = g.param(w1);
            let h = g.conv2d(x, w, None, 1).unwrap();
            let h = g.relu(h);
            let h = g.batch_norm(h, gm, bt, rm, rv).unwrap();
            let w = g.param(w2);
            let z = g.conv2d(h, w, None, 1).unwrap();
            let z = g.reshape(z, &[2, 2, 6, 1]).unwrap();
            let l = g.weighted_bce_with_logits(z, &targets, mask.view(), &[1.0, 2.0]).unwrap();
            g.value(l)[[]]
        };
        let mut base = Graph::new(&s, Mode::Train);
        run(&mut base);
        for id in [w1, gm, bt, w2] {
            let mut moved = s.clone();
            moved.get_mut(id).as_slice_mut().unwrap()[0] += 0.25;
            let upto = base.first_use(id).unwrap();
            let full = run(&mut Graph::new(&moved, Mode::Train));
            let resumed = run(&mut Graph::resume(&base, &moved, upto));
            assert_eq!(full.to_bits(), resumed.to_bits(), "{}", s.name(id));
        }
    }

    #[test]
    fn batch_norm_train_normalizes_and_reports_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[3, 2, 4, 2], &mut rng) * 3.0 + 1.0, true);
        let gm = s.add("g", ArrayD::ones(IxDyn(&[2])), true);
        let bt = s.add("b", ArrayD::zeros(IxDyn(&[2])), true);
        let rm = s.add("rm", ArrayD::zeros(IxDyn(&[2])), false);
        let rv = s.add("rv", ArrayD::ones(IxDyn(&[2])), false);
        let mut g = Graph::new(&s, Mode::Train);
        let xv = g.param(x);
        let y = g.batch_norm(xv, gm, bt, rm, rv).unwrap();
        let yv = g.value(y);
        for c in 0..2 {
            let ch = yv.index_axis(Axis(1), c);
            let m = ch.mean().unwrap();
            let v = ch.mapv(|a| (a - m) * (a - m)).mean().unwrap();
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        let stats = g.take_batch_stats();
        assert_eq!(stats.len(), 1);
        let raw = s.get(x).index_axis(Axis(1), 0).to_owned();
        assert!((stats[0].mean[0] - raw.mean().unwrap()).abs() < 1e-12);

        let mut e = Graph::new(&s, Mode::Eval);
        let xv = e.param(x);
        let y = e.batch_norm(xv, gm, bt, rm, rv).unwrap();
        let expect = s.get(x) / (1.0 + BN_EPS).sqrt();
        assert!((e.value(y) - &expect).iter().all(|d| d.abs() < 1e-12));
        assert!(e.take_batch_stats().is_empty());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut s = ParamStore::new();
        let x = s.add("x", ArrayD::zeros(IxDyn(&[1, 3, 5, 1])), true);
        let w = s.add("w", ArrayD::zeros(IxDyn(&[2, 4, 3, 1])), true);
        let mut g = Graph::new(&s, Mode::Eval);
        let (xv, wv) = (g.param(x), g.param(w));
        assert!(matches!(g.conv2d(xv, wv, None, 1), Err(Error::Shape(_))));
        let y = g.crop_time(xv, 2).unwrap();
        assert!(g.add(xv, y).is_err());
        assert!(g.crop_time(xv, 6).is_err());
        assert!(g.pad_time(xv, 4).is_err());
        assert!(g.backward(xv).is_err());
    }

    #[test]
    fn loss_matches_probability_form_and_ignores_masked_frames() {
        let mut s = ParamStore::new();
        let z = s.add("z", ArrayD::from_shape_vec(IxDyn(&[1, 2, 3, 1]), vec![0.3, -2.0, 5.0, 1.0, 0.0, -0.7]).unwrap(), true);
        let targets = Array3::from_shape_vec((1, 2, 3), vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let mask = Array2::from_shape_vec((1, 3), vec![true, false, true]).unwrap();
        let w = [2.0, 3.0];
        let mut g = Graph::new(&s, Mode::Eval);
        let zv = g.param(z);
        let l = g.weighted_bce_with_logits(zv, &targets, mask.view(), &w).unwrap();
        let mut expect = 0.0;
        for c in 0..2 {
            for t in [0, 2] {
                let p = sigmoid(s.get(z)[[0, c, t, 0]]);
                let y = targets[[0, c, t]];
                expect -= w[c] * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        expect /= 4.0;
        assert!((g.value(l)[[]] - expect).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        let gz = grads.get(z).unwrap();
        assert_eq!(gz[[0, 0, 1, 0]], 0.0);
        assert_eq!(gz[[0, 1, 1, 0]], 0.0);
    }

    #[test]
    fn gradients_conv_and_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[2, 2, 6, 3], &mut rng), true);
        let w = s.add("w", randn(&[3, 2, 3, 2], &mut rng), true);
        let b = s.add("b", randn(&[3], &mut rng), true);
        check(&s, Mode::Eval, |g| {
            let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
            let c = g.conv2d(xv, wv, Some(bv), 1).unwrap();
            let c = g.sigmoid(c);
            let p = g.pad_time(c, 8).unwrap();
            g.crop_time(p, 5).unwrap()
        });
    }

    #[test]
    fn gradients_conv_transpose_and_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[1, 2, 5, 2], &mut rng), true);
        let w = s.add("w", randn(&[2, 3, 3], &mut rng), true);
        let b = s.add("b", randn(&[3], &mut rng), true);
        check(&s, Mode::Eval, |g| {
            let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
            let u = g.conv_transpose_time(xv, wv, Some(bv), 2, 1, 1).unwrap();
            let p = g.max_pool_time(u, 3).unwrap();
            let q = g.max_pool_time(xv, 2).unwrap();
            let q = g.reshape(q, &[1, 1, 3, 4]).unwrap();
            let p = g.reshape(p, &[1, 1, 4, 6]).unwrap();
            let q = g.pad_time(q, 4).unwrap();
            g.concat_width(&[p, q]).unwrap()
        });
    }

    #[test]
    fn gradients_batch_norm_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[2, 2, 4, 2], &mut rng), true);
        let gm = s.add("g", randn(&[2], &mut rng), true);
        let bt = s.add("b", randn(&[2], &mut rng), true);
        let rm = s.add("rm", randn(&[2], &mut rng), false);
        let rv = s.add("rv", randn(&[2], &mut rng).mapv(|v| v.abs() + 0.5), false);
        for mode in [Mode::Train, Mode::Eval] {
            check(&s, mode, |g| {
                let xv = g.param(x);
                let y = g.batch_norm(xv, gm, bt, rm, rv).unwrap();
                let r = g.relu(y);
                g.add(r, xv).unwrap()
            });
        }
    }

    #[test]
    fn gradients_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        let x = s.add("x", randn(&[2, 3, 5, 1], &mut rng), true);
        let q = s.add("q", randn(&[3, 3], &mut rng), true);
        let k = s.add("k", randn(&[3, 3], &mut rng), true);
        let v = s.add("v", randn(&[3, 3], &mut rng), true);
        check(&s, Mode::Eval, |g| {
            let (xv, qv, kv, vv) = (g.param(x), g.param(q), g.param(k), g.param(v));
            let a = g.self_attention(xv, qv, kv, vv).unwrap();
            g.add(a, xv).unwrap()
        });
    }
}

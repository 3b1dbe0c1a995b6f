//! Scaled dot-product self-attention on a single `(T, C)` sequence.

use ndarray::{Array2, ArrayView2, Axis};

pub(crate) struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    pub(crate) output: Array2<f64>,
}

pub(crate) struct AttentionGrads {
    pub x: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

/// Row-wise softmax, stabilised by the row maximum.
pub fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

/// `softmax(Q K^T / sqrt(d_k)) V` with `Q = X W_q`, `K = X W_k`, `V = X W_v`.
pub fn attention(
    x: ArrayView2<'_, f64>,
    w_q: ArrayView2<'_, f64>,
    w_k: ArrayView2<'_, f64>,
    w_v: ArrayView2<'_, f64>,
) -> Array2<f64> {
    attention_forward(x.to_owned(), w_q, w_k, w_v).output
}

pub(crate) fn attention_forward(
    x: Array2<f64>,
    w_q: ArrayView2<'_, f64>,
    w_k: ArrayView2<'_, f64>,
    w_v: ArrayView2<'_, f64>,
) -> AttentionCache {
    let q = x.dot(&w_q);
    let k = x.dot(&w_k);
    let v = x.dot(&w_v);
    let scale = 1.0 / (w_q.ncols() as f64).sqrt();
    let mut attn = q.dot(&k.t()) * scale;
    softmax_rows(&mut attn);
    let output = attn.dot(&v);
    AttentionCache {
        x,
        q,
        k,
        v,
        attn,
        output,
    }
}

pub(crate) fn attention_backward(
    cache: &AttentionCache,
    w_q: ArrayView2<'_, f64>,
    w_k: ArrayView2<'_, f64>,
    w_v: ArrayView2<'_, f64>,
    d_out: ArrayView2<'_, f64>,
) -> AttentionGrads {
    let scale = 1.0 / (w_q.ncols() as f64).sqrt();
    let d_attn = d_out.dot(&cache.v.t());
    let d_v = cache.attn.t().dot(&d_out);
    let row_dot = (&d_attn * &cache.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_scores = &cache.attn * &(&d_attn - &row_dot) * scale;
    let d_q = d_scores.dot(&cache.k);
    let d_k = d_scores.t().dot(&cache.q);
    let xt = cache.x.t();
    AttentionGrads {
        w_q: xt.dot(&d_q),
        w_k: xt.dot(&d_k),
        w_v: xt.dot(&d_v),
        x: d_q.dot(&w_q.t()) + d_k.dot(&w_k.t()) + d_v.dot(&w_v.t()),
    }
}

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::layers::{Init, Norm};
use crate::error::{Error, Result};
use crate::nn::{self, Graph, ParamId, ParamStore, Var};

/// Query, key and value projections, each `d_m x d_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

impl SelfAttentionParams {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64>) -> Result<Self> {
        if w_q.dim() != w_k.dim() || w_q.dim() != w_v.dim() {
            return Err(Error::Shape(format!(
                "attention projections disagree: {:?}, {:?}, {:?}",
                w_q.dim(),
                w_k.dim(),
                w_v.dim()
            )));
        }
        if w_q.ncols() == 0 {
            return Err(Error::Shape("attention projection width d_k must be positive".into()));
        }
        Ok(SelfAttentionParams { w_q, w_k, w_v })
    }

    pub fn random(d_m: usize, d_k: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_m as f64).sqrt();
        let mut m = || Array2::from_shape_fn((d_m, d_k), |_| rng.random_range(-bound..bound));
        SelfAttentionParams {
            w_q: m(),
            w_k: m(),
            w_v: m(),
        }
    }

    pub fn d_m(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.ncols()
    }
}

/// Standard scaled dot-product attention over the rows of `x: (T, d_m)`.
pub fn self_attention(x: ArrayView2<'_, f64>, params: &SelfAttentionParams) -> Result<Array2<f64>> {
    if x.ncols() != params.d_m() {
        return Err(Error::Shape(format!("input width {} but d_m is {}", x.ncols(), params.d_m())));
    }
    if x.nrows() == 0 {
        return Err(Error::Shape("attention over an empty sequence".into()));
    }
    Ok(nn::attention(x, params.w_q.view(), params.w_k.view(), params.w_v.view()))
}

/// Attention, residual add and normalization.
#[derive(Clone, Debug)]
pub(crate) struct AttentionBlock {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    norm: Norm,
}

impl AttentionBlock {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        AttentionBlock {
            w_q: init.uniform(&format!("{name}.w_q"), &[dim, dim], bound),
            w_k: init.uniform(&format!("{name}.w_k"), &[dim, dim], bound),
            w_v: init.uniform(&format!("{name}.w_v"), &[dim, dim], bound),
            norm: Norm::new(init, &format!("{name}.norm"), dim),
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (q, k, v) = (g.param(self.w_q), g.param(self.w_k), g.param(self.w_v));
        let a = g.self_attention(x, q, k, v)?;
        let s = g.add(a, x)?;
        self.norm.apply(g, s)
    }

    pub fn params(&self, store: &ParamStore) -> SelfAttentionParams {
        let m = |id| store.get(id).clone().into_dimensionality().unwrap();
        SelfAttentionParams {
            w_q: m(self.w_q),
            w_k: m(self.w_k),
            w_v: m(self.w_v),
        }
    }
}

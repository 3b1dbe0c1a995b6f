use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Var};

/// Registers freshly initialised tensors under hierarchical names.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..=bound));
        self.store.add(name, value, true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64, trainable: bool) -> ParamId {
        self.store.add(name, ArrayD::from_elem(IxDyn(shape), v), trainable)
    }
}

/// Stride-1 convolution with time padding only.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pad_t: usize,
}

impl Conv {
    /// Kernel `(kt, kw)`; uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize, kt: usize, kw: usize, bias: bool) -> Self {
        let bound = 1.0 / ((c_in * kt * kw) as f64).sqrt();
        Conv {
            w: init.uniform(&format!("{name}.weight"), &[c_out, c_in, kt, kw], bound),
            b: bias.then(|| init.uniform(&format!("{name}.bias"), &[c_out], bound)),
            pad_t: kt / 2,
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv2d(x, w, b, self.pad_t)
    }
}

/// Transposed convolution, kernel 3 along time, upsampling by `stride`.
#[derive(Clone, Debug)]
pub(crate) struct UpConv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

impl UpConv {
    const KERNEL: usize = 3;

    pub fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        let bound = 1.0 / ((c_out * Self::KERNEL) as f64).sqrt();
        UpConv {
            w: init.uniform(&format!("{name}.weight"), &[c_in, c_out, Self::KERNEL], bound),
            b: init.uniform(&format!("{name}.bias"), &[c_out], bound),
            stride,
        }
    }

    /// Padding and output padding that make the output exactly `stride * T`.
    pub fn padding(stride: usize) -> (usize, usize) {
        if stride == 2 {
            (1, 1)
        } else {
            (0, stride - 3)
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (pad, op) = Self::padding(self.stride);
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv_transpose_time(x, w, Some(b), self.stride, pad, op)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        Norm {
            gamma: init.constant(&format!("{name}.gamma"), &[channels], 1.0, true),
            beta: init.constant(&format!("{name}.beta"), &[channels], 0.0, true),
            mean: init.constant(&format!("{name}.running_mean"), &[channels], 0.0, false),
            var: init.constant(&format!("{name}.running_var"), &[channels], 1.0, false),
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.batch_norm(x, self.gamma, self.beta, self.mean, self.var)
    }
}

/// `1 x n` collapse, then two `3 x 1` conv-norm-relu layers, plus skip.
#[derive(Clone, Debug)]
pub(crate) struct ResidualBlock {
    pub collapse: Conv,
    pub conv1: Conv,
    pub norm1: Norm,
    pub conv2: Conv,
    pub norm2: Norm,
    pub skip: Option<Conv>,
    pub residual: bool,
    width: usize,
}

impl ResidualBlock {
    pub fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize, width: usize, residual: bool) -> Self {
        ResidualBlock {
            collapse: Conv::new(init, &format!("{name}.collapse"), c_in, c_in, 1, width, true),
            conv1: Conv::new(init, &format!("{name}.conv1"), c_in, c_out, 3, 1, false),
            norm1: Norm::new(init, &format!("{name}.norm1"), c_out),
            conv2: Conv::new(init, &format!("{name}.conv2"), c_out, c_out, 3, 1, false),
            norm2: Norm::new(init, &format!("{name}.norm2"), c_out),
            skip: (residual && c_in != c_out).then(|| Conv::new(init, &format!("{name}.skip"), c_in, c_out, 1, 1, true)),
            residual,
            width,
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.shape(x).get(3).copied();
        if w != Some(self.width) {
            return Err(Error::Shape(format!("residual block expects width {}, got {:?}", self.width, g.shape(x))));
        }
        let c = self.collapse.apply(g, x)?;
        let h = self.conv1.apply(g, c)?;
        let h = self.norm1.apply(g, h)?;
        let h = g.relu(h);
        let h = self.conv2.apply(g, h)?;
        let h = self.norm2.apply(g, h)?;
        let h = g.relu(h);
        if !self.residual {
            return Ok(h);
        }
        let s = match &self.skip {
            Some(conv) => conv.apply(g, c)?,
            None => c,
        };
        g.add(h, s)
    }

    /// Trainable tensors of the main path, excluding collapse and skip.
    #[cfg(test)]
    pub fn main_path(&self) -> Vec<ParamId> {
        vec![
            self.conv1.w,
            self.norm1.gamma,
            self.norm1.beta,
            self.conv2.w,
            self.norm2.gamma,
            self.norm2.beta,
        ]
    }
}

#[derive(Clone, Debug)]
enum Step {
    Pool,
    Project(Conv),
    Up(UpConv),
}

/// Moves a map from one branch scale to another, matching channels.
#[derive(Clone, Debug)]
pub(crate) struct Rescaler {
    steps: Vec<Step>,
    factor: usize,
}

impl Rescaler {
    pub fn new(init: &mut Init<'_>, name: &str, from: (usize, usize), to: (usize, usize), factor: usize) -> Self {
        let ((sa, ca), (sb, cb)) = (from, to);
        let mut steps = Vec::new();
        if sb > sa {
            steps.extend((sa..sb).map(|_| Step::Pool));
            if ca != cb {
                steps.push(Step::Project(Conv::new(init, &format!("{name}.project"), ca, cb, 1, 1, true)));
            }
        } else if sb < sa {
            for i in 0..sa - sb {
                let c_in = if i == 0 { ca } else { cb };
                steps.push(Step::Up(UpConv::new(init, &format!("{name}.up{i}"), c_in, cb, factor)));
            }
        } else if ca != cb {
            steps.push(Step::Project(Conv::new(init, &format!("{name}.project"), ca, cb, 1, 1, true)));
        }
        Rescaler { steps, factor }
    }

    pub fn apply(&self, g: &mut Graph<'_>, mut x: Var) -> Result<Var> {
        for step in &self.steps {
            x = match step {
                Step::Pool => g.max_pool_time(x, self.factor)?,
                Step::Project(c) => c.apply(g, x)?,
                Step::Up(u) => u.apply(g, x)?,
            };
        }
        Ok(x)
    }
}

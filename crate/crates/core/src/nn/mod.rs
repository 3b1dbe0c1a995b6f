//! A small tape-based autodiff engine sized for the detection network.

mod attention;
mod graph;
mod params;

pub use attention::{attention, softmax_rows};
pub use graph::{sigmoid, BatchStats, Graph, Mode, Var};
pub use params::{Gradients, ParamId, ParamStore};

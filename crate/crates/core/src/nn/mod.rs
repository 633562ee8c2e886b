//! Minimal neural-network machinery: convolution kernels, an autodiff tape, parameter
//! storage and the optimizer.

mod adam;
mod conv;
mod graph;
mod params;

pub use adam::AdamW;
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use graph::{Gradients, Graph, L1Reduction, Var};
pub use params::{ConvLayer, ParamStore};

pub(crate) use graph::{avg_pool2, gram_forward};

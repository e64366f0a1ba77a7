//! Dense `f64` tensors with a reverse-mode tape covering exactly what a
//! dilated depthwise-separable 1-D convnet with a correlation head needs:
//! grouped/dilated convolution, batch norm, ELU, sigmoid, Pearson
//! correlation, a linear layer and logistic loss. Adam is included.

mod adam;
mod error;
mod graph;
mod kernels;
mod norm;
mod tensor;

pub use adam::{AdamConfig, AdamState, WeightDecay};
pub use error::{Result, TensorError};
pub use graph::{
    bce_with_logits, elu, pearson, sigmoid, Conv1dSpec, Gradients, Graph, Padding, Var, BN_EPS,
    PEARSON_EPS,
};
pub use norm::{BatchMoments, BatchNormMode, RunningStats};
pub use tensor::Tensor;

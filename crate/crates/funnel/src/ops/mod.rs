//! Forward and backward passes for the convolutional and normalization
//! primitives the activation layers and toy networks are built from.
//!
//! All ops are pure functions over immutable tensors: train-mode batch norm
//! returns its updated running statistics instead of mutating shared state.

mod conv;
mod depthwise;
mod norm;
mod pool;

pub use conv::{conv_forward, conv_backward, ConvGrads, ConvParams};
pub use depthwise::{depthwise_conv_forward, depthwise_conv_backward, DepthwiseConvParams};
pub use norm::{norm_forward, norm_backward, NormCache, NormGrads, NormKind, NormOutput, NormParams};
pub use pool::{
    global_avgpool, global_avgpool_backward, window_avgpool, window_avgpool_backward,
    window_maxpool, window_maxpool_backward,
};

/// Whether statistics-bearing layers use batch statistics or stored ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

//! Funnel activation (FReLU) micro kernel library.
//!
//! A small, self-contained deep-learning kernel built around one idea: the
//! funnel activation `f(x) = max(x, T(x))`, where the condition `T` is a
//! learned per-channel spatial window response. The crate provides, from
//! first principles:
//!
//! - dense NCHW `f64` tensors with seeded gaussian init ([`tensor`], [`rng`]);
//! - depthwise/full convolution, four normalization kinds, and window
//!   pooling, each with exact backward passes ([`ops`]);
//! - ReLU, PReLU, Swish, FReLU, and every ablation variant of the funnel
//!   condition ([`activations`]);
//! - an independent finite-difference gradient checker ([`gradcheck`],
//!   [`checks`]);
//! - parameter/FLOP accounting over a small model-description language
//!   ([`complexity`]);
//! - activate-field analysis and empirical receptive-field probing
//!   ([`analysis`]);
//! - a deterministic desk-scale training harness with synthetic layout
//!   datasets and IDX ingestion ([`train`]).
//!
//! The `funnel` binary exposes all of it behind subcommands; the `examples/`
//! directory demonstrates each capability as a runnable program.

pub mod activations;
pub mod analysis;
pub mod checks;
pub mod cli;
pub mod complexity;
pub mod error;
pub mod gradcheck;
pub mod ops;
mod par;
pub mod rng;
pub mod shapes;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Axis, Shape, Tensor};

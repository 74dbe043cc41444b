#![cfg_attr(not(feature = "std"), no_std)]

//! Differentiable core of the LUMEN low-light enhancement pipeline.
//!
//! Everything in this crate is pure computation over [`Tensor`]s and needs
//! only `alloc`: the reverse-mode [`graph`], the operator set, the networks
//! (depth estimator, flash simulator, fusion blocks, enhancer), the training
//! objective, and the optimizer. File formats, datasets and the command line
//! live in the companion `lumen` crate.
//!
//! # Features
//! - `std` (default): enables runtime SIMD dispatch in the matrix kernels.

extern crate alloc;

pub mod depthnet;
pub mod enhancer;
mod error;
pub mod flash;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
mod rng;
mod scalar;
mod tensor;

pub use crate::error::{Error, Result};
pub use crate::graph::{Gradients, Graph, Var};
pub use crate::param::{ParamId, ParamKind, ParamStore, Parameter};
pub use crate::rng::RngStream;
pub use crate::scalar::{DType, Real};
pub use crate::tensor::Tensor;

/// Train/eval switch shared by every layer with mode-dependent behaviour
/// (batch normalization statistics, dropout, flash noise).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

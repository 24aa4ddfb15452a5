//! Invertible CSI feedback.
//!
//! An affine-coupling network compresses an angular-domain channel into a
//! short latent `z` plus an auxiliary `r`; the same parameters run the
//! inverse to reconstruct. Between the two sit a learnable non-uniform
//! quantizer, a differentiable bit-channel model and a latent alignment
//! stage, all trained end to end.

pub mod chansim;
pub mod config;
pub mod daq;
pub mod dbcd;
pub mod diff;
pub mod error;
pub mod eval;
pub mod icm;
pub mod inn;
pub mod losses;
pub mod mathx;
pub mod model;
pub mod nn;
pub mod selftest;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};

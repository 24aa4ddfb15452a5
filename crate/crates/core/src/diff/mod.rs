//! Differentiable substrate: parameter storage with gradient buffers,
//! the Adam optimizer and a central finite-difference oracle.
//!
//! Layers in this crate carry hand-written reverse-mode rules. Each one
//! exposes a `forward` that returns its output together with a cache, and a
//! `backward` that consumes the cache and an upstream gradient, returns the
//! gradient with respect to its inputs and accumulates (`+=`) parameter
//! gradients into a [`Grads`] buffer. Composition is ordinary function
//! composition in reverse order.

mod adam;
mod gradcheck;
mod params;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use params::{Grads, ParamId, ParamStore};

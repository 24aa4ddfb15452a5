//! Small convolutional building blocks shared by the coupling sub-networks
//! and the latent alignment network.

mod conv;
mod subnet;

pub use conv::{Conv3x3, Spatial};
pub use subnet::{ResidualConvNet, SubnetCache};

use crate::tensor::Scalar;

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub(crate) fn leaky_relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::lit(LEAKY_SLOPE)
    }
}

#[inline]
pub(crate) fn leaky_relu_grad<T: Scalar>(pre: T) -> T {
    if pre > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}

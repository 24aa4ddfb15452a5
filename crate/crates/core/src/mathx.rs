//! Scalar helpers shared by several modules.

use crate::tensor::Scalar;

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    if y > T::lit(30.0) {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Standard normal tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_round_trip() {
        for y in [1e-8f64, 0.1, 0.5, 1.0, 3.0, 40.0] {
            let back = softplus(softplus_inv(y));
            assert!((back - y).abs() <= 1e-12 * y.max(1.0), "{y} -> {back}");
        }
    }

    #[test]
    fn tail_probability() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-14);
        assert!(q_function(1e3) == 0.0);
    }
}

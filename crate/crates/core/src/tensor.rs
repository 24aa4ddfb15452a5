//! Dense row-major tensors over a generic real scalar.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

/// Storage precision tag, used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Real scalar used throughout the differentiable pipeline.
///
/// Implemented for `f32` (training default) and `f64` (verification).
pub trait Scalar:
    Float + Sum + AddAssign + SubAssign + MulAssign + Debug + Default + Send + Sync + 'static
{
    const DTYPE: DType;

    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c ← alpha·a·b + beta·c` for an `m×k` by `k×n` product on strided
    /// layouts (row stride, column stride per operand).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

/// Largest element offset touched by an `rows×cols` view; panics on
/// out-of-bounds views so the raw-pointer kernels below stay sound.
fn check_view(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "matrix view exceeds its buffer ({last} >= {len})");
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            alpha: Self,
            a: (&[Self], isize, isize),
            b: (&[Self], isize, isize),
            beta: Self,
            c: (&mut [Self], isize, isize),
        ) {
            check_view(a.0.len(), m, k, a.1, a.2);
            check_view(b.0.len(), k, n, b.1, b.2);
            check_view(c.0.len(), m, n, c.1, c.2);
            // SAFETY: every view was bounds-checked above and `c` is
            // uniquely borrowed.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    alpha,
                    a.0.as_ptr(),
                    a.1,
                    a.2,
                    b.0.as_ptr(),
                    b.1,
                    b.2,
                    beta,
                    c.0.as_mut_ptr(),
                    c.1,
                    c.2,
                )
            }
        }
    };
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    gemm_impl!(matrixmultiply::sgemm);
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    gemm_impl!(matrixmultiply::dgemm);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(shape, data.len());
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(x: T) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, x: T) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    /// Errors with the offending node name when any entry is NaN or infinite.
    pub fn check_finite(&self, node: &str) -> Result<()> {
        check_finite(&self.data, node)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

fn shape_err<T>(extents: &[usize], len: usize) -> Result<T> {
    shape(format!("extents {extents:?} do not match data length {len}"))
}

pub fn check_finite<T: Scalar>(data: &[T], node: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            node: node.to_string(),
        })
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

pub fn sq_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

pub fn cast_slice<A: Scalar, B: Scalar>(x: &[A]) -> Vec<B> {
    x.iter().map(|v| B::lit(v.to_f64_lossy())).collect()
}

use num_complex::Complex64;

use super::CsiDims;
use crate::error::{invalid, shape, Result};
use crate::nn::Spatial;
use crate::tensor::Scalar;

/// Stacks real and imaginary parts along a leading channel axis:
/// `(2, N_r, N_t·N_c)`.
pub fn real_from_complex<T: Scalar>(h: &[Complex64]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * h.len());
    out.extend(h.iter().map(|c| T::lit(c.re)));
    out.extend(h.iter().map(|c| T::lit(c.im)));
    out
}

pub fn complex_from_real<T: Scalar>(x: &[T]) -> Result<Vec<Complex64>> {
    if x.len() % 2 != 0 {
        return shape(format!("real stack has odd length {}", x.len()));
    }
    let half = x.len() / 2;
    Ok((0..half)
        .map(|k| Complex64::new(x[k].to_f64_lossy(), x[k + half].to_f64_lossy()))
        .collect())
}

/// Space-to-depth patching with `p×p` patches followed by a channel split.
///
/// A `(2, N_r, W)` real tensor becomes `(2p², N_r/p, W/p)`; patch channel
/// `ch·p² + dy·p + dx` holds element `(ch, Y·p + dy, X·p + dx)`. The first
/// `c` channels form `H1`, the remaining `2p² − c` form `H2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmenter {
    pub patch: usize,
    pub split: usize,
    dims: CsiDims,
    // output position -> input position
    gather: Vec<usize>,
}

impl Segmenter {
    pub fn new(dims: CsiDims, patch: usize, split: usize) -> Result<Self> {
        if patch == 0 {
            return invalid("patch size must be at least 1");
        }
        if dims.n_rx % patch != 0 || dims.width() % patch != 0 {
            return invalid(format!(
                "patch size {patch} does not divide the {}×{} CSI layout; choose a patch size dividing both",
                dims.n_rx,
                dims.width()
            ));
        }
        let channels = 2 * patch * patch;
        // split == channels is the degenerate uncompressed layout (empty H2)
        if split == 0 || split > channels {
            return invalid(format!("channel split must lie in [1, {channels}], got {split}"));
        }
        let (hs, ws) = (dims.n_rx / patch, dims.width() / patch);
        let w = dims.width();
        let plane = dims.n_rx * w;
        let mut gather = Vec::with_capacity(2 * plane);
        for ch in 0..2 {
            for dy in 0..patch {
                for dx in 0..patch {
                    for y in 0..hs {
                        for x in 0..ws {
                            gather.push(ch * plane + (y * patch + dy) * w + x * patch + dx);
                        }
                    }
                }
            }
        }
        Ok(Self {
            patch,
            split,
            dims,
            gather,
        })
    }

    pub fn dims(&self) -> CsiDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        2 * self.patch * self.patch
    }

    pub fn spatial(&self) -> Spatial {
        Spatial {
            height: self.dims.n_rx / self.patch,
            width: self.dims.width() / self.patch,
        }
    }

    /// `M`, the length of `H1` (and of the latent `z`).
    pub fn latent_len(&self) -> usize {
        self.split * self.spatial().area()
    }

    /// `N − M`, the length of `H2` (and of the auxiliary `r`).
    pub fn aux_len(&self) -> usize {
        self.dims.real_len() - self.latent_len()
    }

    /// Compression ratio `M/N = c/(2p²)`.
    pub fn ratio(&self) -> f64 {
        self.split as f64 / self.channels() as f64
    }

    /// Returns the patched tensor; `H1` is the first
    /// [`latent_len`](Self::latent_len) entries, `H2` the rest.
    pub fn segment<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.gather.len() {
            return shape(format!("expected {} real entries, got {}", self.gather.len(), x.len()));
        }
        Ok(self.gather.iter().map(|&i| x[i]).collect())
    }

    pub fn desegment<T: Scalar>(&self, patched: &[T]) -> Result<Vec<T>> {
        if patched.len() != self.gather.len() {
            return shape(format!(
                "expected {} patched entries, got {}",
                self.gather.len(),
                patched.len()
            ));
        }
        let mut out = vec![T::zero(); patched.len()];
        for (&src, &v) in self.gather.iter().zip(patched) {
            out[src] = v;
        }
        Ok(out)
    }
}

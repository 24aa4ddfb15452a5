//! Differentiable adaptive quantizer.
//!
//! For feature dimension `i` with `Q = 2^B` levels,
//!
//! ```text
//! v_i = c_i + Σ_{q=1}^{Q-1} a_{q,i} · ε̂(z_i − b_{q,i}),   ε̂(x) = Tx / (1 + |Tx|)
//! ```
//!
//! during training, and the same sum with the exact sign function at
//! inference. The constraints `a ≥ 0` and `b_1 ≤ … ≤ b_{Q-1}` hold by
//! construction: `a = softplus(raw)` and each boundary is the previous
//! one plus a softplus increment.

use crate::diff::{Grads, ParamId, ParamStore};
use crate::error::{invalid, shape, Result};
use crate::mathx::{sigmoid, softplus, softplus_inv};
use crate::tensor::{Scalar, Tensor};

/// S-shaped approximation of the sign function.
#[inline]
pub fn soft_sign<T: Scalar>(x: T, temperature: T) -> T {
    let tx = temperature * x;
    tx / (T::one() + tx.abs())
}

#[inline]
pub fn soft_sign_grad<T: Scalar>(x: T, temperature: T) -> T {
    let d = T::one() + (temperature * x).abs();
    temperature / (d * d)
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Derived (constraint-satisfying) quantizer parameters for `dims`
/// feature dimensions. `a` and `b` are `(dims, Q−1)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerParams<T> {
    pub bits: u32,
    pub dims: usize,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

/// Quantization levels, `(dims, Q)` row-major: row `i` holds the sorted
/// levels of dimension `i` (column `i` of `V̄`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantPoints<T> {
    pub levels: usize,
    pub dims: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> QuantPoints<T> {
    pub fn column(&self, i: usize) -> &[T] {
        &self.values[i * self.levels..(i + 1) * self.levels]
    }
}

/// Gradients with respect to the derived parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerGrads<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> QuantizerGrads<T> {
    pub fn zeros(dims: usize, bits: u32) -> Self {
        let q1 = (1usize << bits) - 1;
        Self {
            a: vec![T::zero(); dims * q1],
            b: vec![T::zero(); dims * q1],
            c: vec![T::zero(); dims],
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for (x, y) in [(&mut self.a, &o.a), (&mut self.b, &o.b), (&mut self.c, &o.c)] {
            x.iter_mut().zip(y).for_each(|(p, &q)| *p += q);
        }
    }
}

impl<T: Scalar> QuantizerParams<T> {
    pub fn levels_count(&self) -> usize {
        1 << self.bits
    }

    fn q1(&self) -> usize {
        self.levels_count() - 1
    }

    /// Ideal uniform quantizer over `range` replicated on every dimension.
    pub fn uniform(dims: usize, bits: u32, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("quantizer range must satisfy z_min < z_max, got ({lo}, {hi})"));
        }
        if !(1..=8).contains(&bits) {
            return invalid(format!("bit width must lie in [1, 8], got {bits}"));
        }
        let q = 1usize << bits;
        let step = (hi - lo) / q as f64;
        let row_b: Vec<T> = (1..q).map(|k| T::lit(lo + k as f64 * step)).collect();
        Ok(Self {
            bits,
            dims,
            a: vec![T::lit(step / 2.0); dims * (q - 1)],
            b: (0..dims).flat_map(|_| row_b.iter().copied()).collect(),
            c: vec![T::lit((hi + lo) / 2.0); dims],
        })
    }

    pub fn check_shapes(&self, z_len: usize) -> Result<()> {
        if z_len != self.dims {
            return shape(format!("quantizer has {} dimensions, input has {z_len}", self.dims));
        }
        Ok(())
    }

    /// `v̄^(1) = c − Σ a`, `v̄^(q) = v̄^(q−1) + 2 a_{q−1}` for `q = 2..Q`.
    pub fn quant_points(&self) -> QuantPoints<T> {
        let (q, q1) = (self.levels_count(), self.q1());
        let mut values = Vec::with_capacity(self.dims * q);
        for i in 0..self.dims {
            let a = &self.a[i * q1..(i + 1) * q1];
            let mut level = self.c[i] - a.iter().copied().sum::<T>();
            values.push(level);
            for &ak in a {
                level += ak + ak;
                values.push(level);
            }
        }
        QuantPoints {
            levels: q,
            dims: self.dims,
            values,
        }
    }

    /// Chains `dL/dV̄` into `dL/da` and `dL/dc`.
    pub fn quant_points_backward(&self, g_levels: &[T], out: &mut QuantizerGrads<T>) {
        let (q, q1) = (self.levels_count(), self.q1());
        for i in 0..self.dims {
            let g = &g_levels[i * q..(i + 1) * q];
            let total: T = g.iter().copied().sum();
            out.c[i] += total;
            // level q depends on a_k as −1 for all q, and +2 when q > k
            let mut tail = total;
            for k in 0..q1 {
                tail -= g[k];
                out.a[i * q1 + k] += tail + tail - total;
            }
        }
    }

    pub fn quantize_soft(&self, z: &[T], temperature: T) -> Vec<T> {
        let q1 = self.q1();
        z.iter()
            .enumerate()
            .map(|(i, &zi)| {
                let a = &self.a[i * q1..(i + 1) * q1];
                let b = &self.b[i * q1..(i + 1) * q1];
                self.c[i]
                    + a.iter()
                        .zip(b)
                        .map(|(&ak, &bk)| ak * soft_sign(zi - bk, temperature))
                        .sum::<T>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dz`.
    pub fn quantize_soft_backward(&self, z: &[T], g_v: &[T], temperature: T, out: &mut QuantizerGrads<T>) -> Vec<T> {
        let q1 = self.q1();
        z.iter()
            .zip(g_v)
            .enumerate()
            .map(|(i, (&zi, &g))| {
                out.c[i] += g;
                let mut gz = T::zero();
                for k in 0..q1 {
                    let idx = i * q1 + k;
                    let x = zi - self.b[idx];
                    let d = soft_sign_grad(x, temperature);
                    out.a[idx] += g * soft_sign(x, temperature);
                    out.b[idx] -= g * self.a[idx] * d;
                    gz += self.a[idx] * d;
                }
                g * gz
            })
            .collect()
    }

    pub fn quantize_hard(&self, z: &[T]) -> Vec<T> {
        let q1 = self.q1();
        z.iter()
            .enumerate()
            .map(|(i, &zi)| {
                let a = &self.a[i * q1..(i + 1) * q1];
                let b = &self.b[i * q1..(i + 1) * q1];
                self.c[i] + a.iter().zip(b).map(|(&ak, &bk)| ak * sign(zi - bk)).sum::<T>()
            })
            .collect()
    }

    /// Region index per dimension: the number of boundaries strictly
    /// below `z_i`. Level `index` of [`quant_points`](Self::quant_points)
    /// equals [`quantize_hard`](Self::quantize_hard) off the boundaries.
    pub fn hard_indices(&self, z: &[T]) -> Vec<usize> {
        let q1 = self.q1();
        z.iter()
            .enumerate()
            .map(|(i, &zi)| self.b[i * q1..(i + 1) * q1].iter().filter(|&&bk| bk < zi).count())
            .collect()
    }

    pub fn satisfies_constraints(&self) -> bool {
        let q1 = self.q1();
        self.a.iter().all(|&v| v >= T::zero())
            && (0..self.dims).all(|i| self.b[i * q1..(i + 1) * q1].windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Quantizer parameters registered in a [`ParamStore`] in raw
/// (unconstrained) form.
#[derive(Debug, Clone)]
pub struct Daq {
    pub dims: usize,
    pub bits: u32,
    pub temperature: f64,
    pub a_raw: ParamId,
    pub b_first: ParamId,
    pub b_inc_raw: ParamId,
    pub c: ParamId,
}

impl Daq {
    /// Registers parameters initialized to the uniform quantizer on `range`.
    pub fn init_uniform<T: Scalar>(
        store: &mut ParamStore<T>,
        dims: usize,
        bits: u32,
        range: (f64, f64),
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return invalid(format!("quantizer temperature must be positive, got {temperature}"));
        }
        let init = QuantizerParams::<T>::uniform(dims, bits, range)?;
        let q1 = (1usize << bits) - 1;
        let step = T::lit((range.1 - range.0) / (q1 + 1) as f64);
        let a_raw: Vec<T> = init.a.iter().map(|&a| softplus_inv(a)).collect();
        let b_first: Vec<T> = (0..dims).map(|i| init.b[i * q1]).collect();
        let b_inc = vec![softplus_inv(step); dims * (q1 - 1)];
        Ok(Self {
            dims,
            bits,
            temperature,
            a_raw: store.insert("daq.a_raw", Tensor::from_vec(&[dims, q1], a_raw)?),
            b_first: store.insert("daq.b_first", Tensor::from_vec(&[dims], b_first)?),
            b_inc_raw: store.insert("daq.b_inc_raw", Tensor::from_vec(&[dims, q1 - 1], b_inc)?),
            c: store.insert("daq.c", Tensor::from_vec(&[dims], init.c)?),
        })
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.a_raw, self.b_first, self.b_inc_raw, self.c]
    }

    pub fn derive<T: Scalar>(&self, store: &ParamStore<T>) -> QuantizerParams<T> {
        let q1 = (1usize << self.bits) - 1;
        let a = store.get(self.a_raw).iter().map(|&r| softplus(r)).collect();
        let first = store.get(self.b_first);
        let inc = store.get(self.b_inc_raw);
        let mut b = Vec::with_capacity(self.dims * q1);
        for i in 0..self.dims {
            let mut edge = first[i];
            b.push(edge);
            for k in 0..q1 - 1 {
                edge += softplus(inc[i * (q1 - 1) + k]);
                b.push(edge);
            }
        }
        QuantizerParams {
            bits: self.bits,
            dims: self.dims,
            a,
            b,
            c: store.get(self.c).to_vec(),
        }
    }

    /// Chains derived-parameter gradients into the raw parameters.
    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, g: &QuantizerGrads<T>, grads: &mut Grads<T>) {
        let q1 = (1usize << self.bits) - 1;
        {
            let raw = store.get(self.a_raw);
            let ga = grads.get_mut(self.a_raw);
            for k in 0..raw.len() {
                ga[k] += g.a[k] * sigmoid(raw[k]);
            }
        }
        {
            let gc = grads.get_mut(self.c);
            gc.iter_mut().zip(&g.c).for_each(|(x, &y)| *x += y);
        }
        let inc = store.get(self.b_inc_raw);
        let mut g_first = vec![T::zero(); self.dims];
        let mut g_inc = vec![T::zero(); inc.len()];
        for i in 0..self.dims {
            let gb = &g.b[i * q1..(i + 1) * q1];
            g_first[i] = gb.iter().copied().sum();
            // boundary q depends on increment k for every q > k
            let mut tail = T::zero();
            for k in (0..q1 - 1).rev() {
                tail += gb[k + 1];
                g_inc[i * (q1 - 1) + k] = tail * sigmoid(inc[i * (q1 - 1) + k]);
            }
        }
        grads.get_mut(self.b_first).iter_mut().zip(&g_first).for_each(|(x, &y)| *x += y);
        grads.get_mut(self.b_inc_raw).iter_mut().zip(&g_inc).for_each(|(x, &y)| *x += y);
    }
}

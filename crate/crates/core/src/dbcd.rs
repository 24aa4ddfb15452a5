//! Differentiable bit-channel distortion.
//!
//! Training path for one feature dimension:
//!
//! ```text
//! v ──soft index──▶ w ──TPM──▶ π = P w ──Gumbel-softmax──▶ π̂ ──▶ v̂ = v̄ᵀ one_hot(argmax π̂)
//! ```
//!
//! The forward value is always an exact quantization level; gradients flow
//! through the relaxed `π̂` (straight-through). [`transmit_bits`] is the
//! non-differentiable BPSK/AWGN pipeline used at inference.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mathx::q_function;
use crate::tensor::Scalar;

/// Floor added inside `log(π)` so zero-probability entries stay finite.
pub const LOG_FLOOR: f64 = 1e-20;

/// Binary labelling of quantization indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BitCoder {
    #[default]
    Natural,
    Gray,
}

impl BitCoder {
    pub fn encode(self, index: usize) -> usize {
        match self {
            BitCoder::Natural => index,
            BitCoder::Gray => index ^ (index >> 1),
        }
    }

    pub fn decode(self, code: usize) -> usize {
        match self {
            BitCoder::Natural => code,
            BitCoder::Gray => {
                let mut i = code;
                let mut shift = code >> 1;
                while shift != 0 {
                    i ^= shift;
                    shift >>= 1;
                }
                i
            }
        }
    }
}

/// Column-stochastic transition matrix: `p(i, j) = P(detect i | sent j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tpm {
    pub bits: u32,
    pub snr: f64,
    pub coder: BitCoder,
    /// Row-major `Q × Q`.
    pub p: Vec<f64>,
}

impl Tpm {
    pub fn size(&self) -> usize {
        1 << self.bits
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.size() + j]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let q = self.size();
        (0..q).map(|j| (0..q).map(|i| self.at(i, j)).sum()).collect()
    }

    pub fn identity(bits: u32) -> Self {
        let q = 1usize << bits;
        let mut p = vec![0.0; q * q];
        for i in 0..q {
            p[i * q + i] = 1.0;
        }
        Self {
            bits,
            snr: f64::INFINITY,
            coder: BitCoder::Natural,
            p,
        }
    }
}

/// Per-bit crossover probability `Q(√γ)` of the BPSK/AWGN channel.
pub fn crossover(snr: f64) -> f64 {
    if snr.is_infinite() {
        0.0
    } else {
        q_function(snr.sqrt())
    }
}

/// `p_ij = Q(√γ)^{d} (1 − Q(√γ))^{B − d}` with `d` the Hamming distance
/// between the code words of `i` and `j`.
pub fn tpm_bpsk_awgn(snr: f64, bits: u32, coder: BitCoder) -> Result<Tpm> {
    if !(snr >= 0.0) {
        return invalid(format!("SNR must be non-negative, got {snr}"));
    }
    if !(1..=8).contains(&bits) {
        return invalid(format!("bit width must lie in [1, 8], got {bits}"));
    }
    let pe = crossover(snr);
    let q = 1usize << bits;
    let mut p = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            let d = (coder.encode(i) ^ coder.encode(j)).count_ones() as i32;
            p[i * q + j] = pe.powi(d) * (1.0 - pe).powi(bits as i32 - d);
        }
    }
    Ok(Tpm {
        bits,
        snr,
        coder,
        p,
    })
}

/// `w_q ∝ exp(−|v − v̄_q| / β)`.
pub fn soft_index_map<T: Scalar>(v: T, levels: &[T], beta: T) -> Vec<T> {
    let logits: Vec<T> = levels.iter().map(|&l| -(v - l).abs() / beta).collect();
    softmax(&logits)
}

/// Returns `(dL/dv, dL/dv̄)` given `dL/dw`.
pub fn soft_index_map_backward<T: Scalar>(v: T, levels: &[T], beta: T, w: &[T], g_w: &[T]) -> (T, Vec<T>) {
    let g_logit = softmax_backward(w, g_w);
    let mut g_v = T::zero();
    let g_levels = levels
        .iter()
        .zip(&g_logit)
        .map(|(&l, &g)| {
            let s = sign(v - l);
            g_v -= g * s / beta;
            g * s / beta
        })
        .collect();
    (g_v, g_levels)
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

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let e: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `dL/dlogits = y ⊙ (g − ⟨y, g⟩)`.
pub fn softmax_backward<T: Scalar>(y: &[T], g: &[T]) -> Vec<T> {
    let inner: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
    y.iter().zip(g).map(|(&a, &b)| a * (b - inner)).collect()
}

/// `π = P w`.
pub fn categorical_pi<T: Scalar>(tpm: &Tpm, w: &[T]) -> Vec<T> {
    let q = tpm.size();
    (0..q)
        .map(|i| (0..q).map(|j| T::lit(tpm.at(i, j)) * w[j]).sum())
        .collect()
}

/// `dL/dw = Pᵀ dL/dπ`.
pub fn categorical_pi_backward<T: Scalar>(tpm: &Tpm, g_pi: &[T]) -> Vec<T> {
    let q = tpm.size();
    (0..q)
        .map(|j| (0..q).map(|i| T::lit(tpm.at(i, j)) * g_pi[i]).sum())
        .collect()
}

/// `g = −log(−log u)` with `u ~ U(0, 1)`.
pub fn sample_gumbel<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Relaxed sample `π̂` and its hard argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample<T> {
    pub soft: Vec<T>,
    pub index: usize,
}

impl<T: Scalar> GumbelSample<T> {
    pub fn one_hot(&self) -> Vec<T> {
        (0..self.soft.len())
            .map(|k| if k == self.index { T::one() } else { T::zero() })
            .collect()
    }
}

/// `π̂_j = softmax((log(π_j + ε) + g_j) / τ)`; the emitted value is
/// `one_hot(argmax π̂)`.
pub fn gumbel_softmax<T: Scalar>(pi: &[T], tau: T, noise: &[f64]) -> GumbelSample<T> {
    let floor = T::lit(LOG_FLOOR);
    let logits: Vec<T> = pi
        .iter()
        .zip(noise)
        .map(|(&p, &g)| ((p + floor).ln() + T::lit(g)) / tau)
        .collect();
    // argmax on the logits: ties and underflowed softmax entries cannot
    // pick a zero-probability class
    let index = logits
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    GumbelSample {
        soft: softmax(&logits),
        index,
    }
}

/// `dL/dπ` given `dL/dπ̂` (relaxed path, noise held fixed).
pub fn gumbel_softmax_backward<T: Scalar>(pi: &[T], tau: T, sample: &GumbelSample<T>, g_soft: &[T]) -> Vec<T> {
    let floor = T::lit(LOG_FLOOR);
    softmax_backward(&sample.soft, g_soft)
        .into_iter()
        .zip(pi)
        .map(|(g, &p)| g / (tau * (p + floor)))
        .collect()
}

/// `v̂ = v̄ᵀ π̂`.
pub fn dequant_symbol<T: Scalar>(levels: &[T], pi_hat: &[T]) -> T {
    levels.iter().zip(pi_hat).map(|(&l, &p)| l * p).sum()
}

/// One feature dimension pushed through the differentiable bit channel.
#[derive(Debug, Clone)]
pub struct ChannelPass<T> {
    pub w: Vec<T>,
    pub pi: Vec<T>,
    pub sample: GumbelSample<T>,
    pub v_hat: T,
}

/// Soft index → TPM → Gumbel straight-through → dequantization.
pub fn channel_forward<T: Scalar>(v: T, levels: &[T], tpm: &Tpm, beta: T, tau: T, noise: &[f64]) -> ChannelPass<T> {
    let w = soft_index_map(v, levels, beta);
    let pi = categorical_pi(tpm, &w);
    let sample = gumbel_softmax(&pi, tau, noise);
    let v_hat = levels[sample.index];
    ChannelPass { w, pi, sample, v_hat }
}

/// Returns `(dL/dv, dL/dv̄)` for upstream `dL/dv̂`.
pub fn channel_backward<T: Scalar>(
    v: T,
    levels: &[T],
    tpm: &Tpm,
    beta: T,
    tau: T,
    pass: &ChannelPass<T>,
    g_v_hat: T,
) -> (T, Vec<T>) {
    // v̂ = v̄ᵀ π̂_st with π̂_st valued one_hot, differentiated as π̂
    let mut g_levels: Vec<T> = (0..levels.len())
        .map(|k| if k == pass.sample.index { g_v_hat } else { T::zero() })
        .collect();
    let g_soft: Vec<T> = levels.iter().map(|&l| l * g_v_hat).collect();
    let g_pi = gumbel_softmax_backward(&pass.pi, tau, &pass.sample, &g_soft);
    let g_w = categorical_pi_backward(tpm, &g_pi);
    let (g_v, g_lv) = soft_index_map_backward(v, levels, beta, &pass.w, &g_w);
    g_levels.iter_mut().zip(&g_lv).for_each(|(a, &b)| *a += b);
    (g_v, g_levels)
}

/// Encodes `index` into `bits` bits (MSB first), maps `0 → −1, 1 → +1`,
/// adds Gaussian noise of variance `1/γ` and decides each bit by sign.
pub fn transmit_bits<R: Rng>(index: usize, snr: f64, bits: u32, coder: BitCoder, rng: &mut R) -> usize {
    let code = coder.encode(index);
    if snr.is_infinite() {
        return index;
    }
    let sigma = if snr > 0.0 { 1.0 / snr.sqrt() } else { f64::INFINITY };
    let mut detected = 0usize;
    for k in (0..bits).rev() {
        let bit = (code >> k) & 1;
        let s = if bit == 1 { 1.0 } else { -1.0 };
        let n: f64 = StandardNormal.sample(rng);
        let y = if sigma.is_infinite() { n } else { s + sigma * n };
        detected = (detected << 1) | usize::from(y > 0.0);
    }
    coder.decode(detected)
}

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::CsiDims;
use crate::error::{invalid, Result};

/// Clustered-multipath geometry for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelGeometry {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_sc: usize,
    pub min_paths: usize,
    pub max_paths: usize,
    /// Half-width of the uniform angle-of-departure/arrival range, degrees.
    pub angle_range_deg: f64,
    /// Mean excess delay of non-leading paths, in DFT delay bins.
    pub mean_delay_bins: f64,
    /// Power-delay decay constant, in delay bins.
    pub power_decay_bins: f64,
}

impl Default for ChannelGeometry {
    fn default() -> Self {
        Self {
            n_rx: 4,
            n_tx: 8,
            n_sc: 16,
            min_paths: 3,
            max_paths: 8,
            angle_range_deg: 10.0,
            mean_delay_bins: 0.5,
            power_decay_bins: 1.0,
        }
    }
}

impl ChannelGeometry {
    pub fn dims(&self) -> CsiDims {
        CsiDims {
            n_rx: self.n_rx,
            n_tx: self.n_tx,
            n_sc: self.n_sc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 || self.n_tx == 0 || self.n_sc == 0 {
            return invalid("antenna and subcarrier counts must be at least 1");
        }
        if self.min_paths == 0 || self.max_paths < self.min_paths {
            return invalid(format!(
                "degenerate path-count range [{}, {}]",
                self.min_paths, self.max_paths
            ));
        }
        if !(self.angle_range_deg >= 0.0 && self.angle_range_deg <= 90.0) {
            return invalid("angle range must lie in [0, 90] degrees");
        }
        if !(self.mean_delay_bins >= 0.0) || !(self.power_decay_bins > 0.0) {
            return invalid("delay parameters must be non-negative with positive decay");
        }
        Ok(())
    }
}

/// One propagation path: complex gain, arrival/departure angles (radians)
/// and delay normalized to the subcarrier spacing (`τ·Δf`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    pub aoa: f64,
    pub aod: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub paths: usize,
    pub seed: u64,
}

/// One channel realization `H = [H_1, …, H_Nc]`, stored row-major as an
/// `(N_r, N_t·N_c)` complex matrix: entry `(r, n·N_t + t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub dims: CsiDims,
    pub h: Vec<Complex32>,
    pub meta: Option<SampleMeta>,
}

impl CsiSample {
    pub fn frobenius_sq(&self) -> f64 {
        self.h.iter().map(|c| c.norm_sqr() as f64).sum()
    }

    pub fn to_c64(&self) -> Vec<Complex64> {
        self.h.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect()
    }
}

fn steering(n: usize, angle: f64) -> impl Iterator<Item = Complex64> {
    let phase = PI * angle.sin();
    (0..n).map(move |k| Complex64::from_polar(1.0, phase * k as f64))
}

/// Evaluates `H_n = Σ_p α_p a_r(θ_p) a_t(φ_p)^H e^{−j2π n τ_p}` with
/// half-wavelength ULA steering vectors.
pub fn channel_from_paths(dims: CsiDims, paths: &[PathParams]) -> Result<Vec<Complex64>> {
    if paths.is_empty() {
        return invalid("channel needs at least one path");
    }
    let CsiDims { n_rx, n_tx, n_sc } = dims;
    let width = dims.width();
    let mut h = vec![Complex64::new(0.0, 0.0); n_rx * width];
    for p in paths {
        let ar: Vec<Complex64> = steering(n_rx, p.aoa).collect();
        let at: Vec<Complex64> = steering(n_tx, p.aod).map(|c| c.conj()).collect();
        for n in 0..n_sc {
            let f = p.gain * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * p.delay);
            for r in 0..n_rx {
                let fr = f * ar[r];
                let row = &mut h[r * width + n * n_tx..r * width + (n + 1) * n_tx];
                for (dst, &a) in row.iter_mut().zip(&at) {
                    *dst += fr * a;
                }
            }
        }
    }
    Ok(h)
}

fn sample_paths<R: Rng>(geo: &ChannelGeometry, rng: &mut R) -> Vec<PathParams> {
    let count = rng.random_range(geo.min_paths..=geo.max_paths);
    let half = geo.angle_range_deg.to_radians();
    let angle = Uniform::new_inclusive(-half, half).expect("valid angle range");
    let mut delays = Vec::with_capacity(count);
    delays.push(0.0);
    if geo.mean_delay_bins > 0.0 {
        let exp = Exp::new(1.0 / geo.mean_delay_bins).expect("positive rate");
        for _ in 1..count {
            delays.push(exp.sample(rng));
        }
    } else {
        delays.resize(count, 0.0);
    }
    let powers: Vec<f64> = delays.iter().map(|d| (-d / geo.power_decay_bins).exp()).collect();
    let total: f64 = powers.iter().sum();
    delays
        .iter()
        .zip(&powers)
        .map(|(&d, &pw)| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let scale = (pw / total / 2.0).sqrt();
            PathParams {
                gain: Complex64::new(re * scale, im * scale),
                aoa: angle.sample(rng),
                aod: angle.sample(rng),
                delay: d / geo.n_sc as f64,
            }
        })
        .collect()
}

/// Draws `count` channels. Sample `i` uses ChaCha stream `i` of `seed`,
/// so each sample is reproducible on its own.
///
/// Path powers are normalized per sample so that the expected per-entry
/// power `E|H_{r,c}|²` is one.
pub fn generate_channels(count: usize, geo: &ChannelGeometry, seed: u64) -> Result<Vec<CsiSample>> {
    geo.validate()?;
    if count == 0 {
        return invalid("sample count must be at least 1");
    }
    let dims = geo.dims();
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let paths = sample_paths(geo, &mut rng);
            let h = channel_from_paths(dims, &paths)?;
            Ok(CsiSample {
                dims,
                h: h.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect(),
                meta: Some(SampleMeta {
                    paths: paths.len(),
                    seed,
                }),
            })
        })
        .collect()
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{ResidualConvNet, Spatial, SubnetCache};
use crate::tensor::Scalar;

/// Bound on `|ρ|` before `exp(ρ)` is considered to overflow.
pub const RHO_CLAMP: f64 = 5.0;

/// How the multiplicative coupling term `exp(ρ(H1'))` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMode {
    /// `ρ ≡ 0`: purely additive coupling.
    #[default]
    Disabled,
    /// `ρ(x) = x`, with channels of `H1'` tiled cyclically over `H2`.
    Identity,
    /// A third residual sub-network, output zero at initialization and
    /// soft-clamped as `5·tanh(·/5)`.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    pub c1: usize,
    pub c2: usize,
    pub spatial: Spatial,
}

/// One affine coupling block:
///
/// ```text
/// H1' = H1 + φ(H2)
/// H2' = H2 ⊙ exp(ρ(H1')) + η(H1')
/// ```
#[derive(Debug, Clone)]
pub struct CouplingBlock {
    pub index: usize,
    pub geometry: BlockGeometry,
    pub phi: ResidualConvNet,
    pub eta: ResidualConvNet,
    pub rho: Option<ResidualConvNet>,
    pub rho_mode: RhoMode,
}

/// Intermediate values saved by a coupling pass for its backward rule.
#[derive(Debug, Clone)]
pub struct CouplingCache<T> {
    // forward direction: inputs (x1, x2); inverse direction: recovered x2
    x1: Vec<T>,
    x2: Vec<T>,
    y1: Vec<T>,
    phi: SubnetCache<T>,
    eta: SubnetCache<T>,
    rho: Option<SubnetCache<T>>,
    scale: Vec<T>,
}

impl CouplingBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        index: usize,
        geometry: BlockGeometry,
        hidden: usize,
        rho_mode: RhoMode,
        rng: &mut R,
    ) -> Self {
        let BlockGeometry { c1, c2, spatial } = geometry;
        let phi = ResidualConvNet::new(store, &format!("inn.block{index}.phi"), c2, hidden, c1, spatial, rng);
        let eta = ResidualConvNet::new(store, &format!("inn.block{index}.eta"), c1, hidden, c2, spatial, rng);
        let rho = (rho_mode == RhoMode::Learned)
            .then(|| ResidualConvNet::new(store, &format!("inn.block{index}.rho"), c1, hidden, c2, spatial, rng));
        Self {
            index,
            geometry,
            phi,
            eta,
            rho,
            rho_mode,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.phi.params();
        p.extend(self.eta.params());
        if let Some(r) = &self.rho {
            p.extend(r.params());
        }
        p
    }

    fn split_lens(&self) -> (usize, usize) {
        let a = self.geometry.spatial.area();
        (self.geometry.c1 * a, self.geometry.c2 * a)
    }

    /// `ρ(y1)` laid out like `H2`, with its cache for learned mode.
    fn rho_eval<T: Scalar>(&self, store: &ParamStore<T>, y1: &[T]) -> Result<(Vec<T>, Option<SubnetCache<T>>)> {
        let (_, n2) = self.split_lens();
        let sp = self.geometry.spatial;
        let (s, cache) = match self.rho_mode {
            RhoMode::Disabled => return Ok((Vec::new(), None)),
            RhoMode::Identity => {
                let a = sp.area();
                let c1 = self.geometry.c1;
                let s: Vec<T> = (0..n2).map(|k| y1[((k / a) % c1) * a + k % a]).collect();
                (s, None)
            }
            RhoMode::Learned => {
                let (raw, c) = self.rho.as_ref().expect("learned rho subnet").forward(store, y1, sp);
                let clamp = T::lit(RHO_CLAMP);
                (raw.iter().map(|&v| clamp * (v / clamp).tanh()).collect(), Some(c))
            }
        };
        let clamp = T::lit(RHO_CLAMP);
        if s.iter().any(|v| !(v.abs() <= clamp)) {
            return Err(Error::CouplingOverflow {
                block: self.index,
                clamp: RHO_CLAMP,
            });
        }
        Ok((s.iter().map(|v| v.exp()).collect(), cache))
    }

    /// Adds the contribution of `d loss / d exp(ρ)` (given as `g_scale`)
    /// to the gradient of `y1`.
    fn rho_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        y1: &[T],
        cache: Option<&SubnetCache<T>>,
        scale: &[T],
        g_scale: &[T],
        g_y1: &mut [T],
        grads: &mut Grads<T>,
    ) {
        let g_s: Vec<T> = g_scale.iter().zip(scale).map(|(&g, &e)| g * e).collect();
        match self.rho_mode {
            RhoMode::Disabled => {}
            RhoMode::Identity => {
                let a = self.geometry.spatial.area();
                let c1 = self.geometry.c1;
                for (k, &g) in g_s.iter().enumerate() {
                    g_y1[((k / a) % c1) * a + k % a] += g;
                }
            }
            RhoMode::Learned => {
                let net = self.rho.as_ref().expect("learned rho subnet");
                let clamp = T::lit(RHO_CLAMP);
                let g_raw: Vec<T> = g_s
                    .iter()
                    .zip(scale)
                    .map(|(&g, &e)| {
                        let t = e.ln() / clamp;
                        g * (T::one() - t * t)
                    })
                    .collect();
                let g = net.backward(store, y1, cache.expect("rho cache"), &g_raw, self.geometry.spatial, grads);
                g_y1.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x1: &[T], x2: &[T]) -> Result<(Vec<T>, Vec<T>, CouplingCache<T>)> {
        let sp = self.geometry.spatial;
        let (phi_out, phi_cache) = self.phi.forward(store, x2, sp);
        let y1: Vec<T> = x1.iter().zip(&phi_out).map(|(&a, &b)| a + b).collect();
        let (scale, rho_cache) = self.rho_eval(store, &y1)?;
        let (eta_out, eta_cache) = self.eta.forward(store, &y1, sp);
        let y2: Vec<T> = if scale.is_empty() {
            x2.iter().zip(&eta_out).map(|(&a, &b)| a + b).collect()
        } else {
            x2.iter()
                .zip(&scale)
                .zip(&eta_out)
                .map(|((&a, &e), &b)| a * e + b)
                .collect()
        };
        let cache = CouplingCache {
            x1: x1.to_vec(),
            x2: x2.to_vec(),
            y1: y1.clone(),
            phi: phi_cache,
            eta: eta_cache,
            rho: rho_cache,
            scale,
        };
        Ok((y1, y2, cache))
    }

    /// Given `dL/dH1'` and `dL/dH2'`, returns `(dL/dH1, dL/dH2)`.
    pub fn forward_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &CouplingCache<T>,
        g_y1: &[T],
        g_y2: &[T],
        grads: &mut Grads<T>,
    ) -> (Vec<T>, Vec<T>) {
        let sp = self.geometry.spatial;
        let mut g_x2: Vec<T> = if cache.scale.is_empty() {
            g_y2.to_vec()
        } else {
            g_y2.iter().zip(&cache.scale).map(|(&g, &e)| g * e).collect()
        };
        let mut g_y1_total = g_y1.to_vec();
        let g_eta_in = self.eta.backward(store, &cache.y1, &cache.eta, g_y2, sp, grads);
        g_y1_total.iter_mut().zip(&g_eta_in).for_each(|(a, &b)| *a += b);
        if !cache.scale.is_empty() {
            let g_scale: Vec<T> = g_y2.iter().zip(&cache.x2).map(|(&g, &x)| g * x).collect();
            self.rho_backward(store, &cache.y1, cache.rho.as_ref(), &cache.scale, &g_scale, &mut g_y1_total, grads);
        }
        let g_phi_in = self.phi.backward(store, &cache.x2, &cache.phi, &g_y1_total, sp, grads);
        g_x2.iter_mut().zip(&g_phi_in).for_each(|(a, &b)| *a += b);
        (g_y1_total, g_x2)
    }

    /// Exact inverse. `H2` is recovered first from `H1'`, then
    /// `H1 = H1' − φ(H2)` uses the recovered `H2`.
    pub fn inverse<T: Scalar>(&self, store: &ParamStore<T>, y1: &[T], y2: &[T]) -> Result<(Vec<T>, Vec<T>, CouplingCache<T>)> {
        let sp = self.geometry.spatial;
        let (scale, rho_cache) = self.rho_eval(store, y1)?;
        let (eta_out, eta_cache) = self.eta.forward(store, y1, sp);
        let x2: Vec<T> = if scale.is_empty() {
            y2.iter().zip(&eta_out).map(|(&a, &b)| a - b).collect()
        } else {
            y2.iter()
                .zip(&eta_out)
                .zip(&scale)
                .map(|((&a, &b), &e)| (a - b) / e)
                .collect()
        };
        let (phi_out, phi_cache) = self.phi.forward(store, &x2, sp);
        let x1: Vec<T> = y1.iter().zip(&phi_out).map(|(&a, &b)| a - b).collect();
        let cache = CouplingCache {
            x1: x1.clone(),
            x2: x2.clone(),
            y1: y1.to_vec(),
            phi: phi_cache,
            eta: eta_cache,
            rho: rho_cache,
            scale,
        };
        Ok((x1, x2, cache))
    }

    /// Given `dL/dH1` and `dL/dH2` at the inverse outputs, returns
    /// `(dL/dH1', dL/dH2')`.
    pub fn inverse_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &CouplingCache<T>,
        g_x1: &[T],
        g_x2: &[T],
        grads: &mut Grads<T>,
    ) -> (Vec<T>, Vec<T>) {
        let sp = self.geometry.spatial;
        // x1 = y1 − φ(x2)
        let mut g_y1 = g_x1.to_vec();
        let neg: Vec<T> = g_x1.iter().map(|&g| -g).collect();
        let g_phi_in = self.phi.backward(store, &cache.x2, &cache.phi, &neg, sp, grads);
        let g_x2_total: Vec<T> = g_x2.iter().zip(&g_phi_in).map(|(&a, &b)| a + b).collect();
        // x2 = (y2 − η(y1)) ⊘ exp(ρ(y1))
        let g_y2: Vec<T> = if cache.scale.is_empty() {
            g_x2_total.clone()
        } else {
            g_x2_total.iter().zip(&cache.scale).map(|(&g, &e)| g / e).collect()
        };
        let neg_eta: Vec<T> = g_y2.iter().map(|&g| -g).collect();
        let g_eta_in = self.eta.backward(store, &cache.y1, &cache.eta, &neg_eta, sp, grads);
        g_y1.iter_mut().zip(&g_eta_in).for_each(|(a, &b)| *a += b);
        if !cache.scale.is_empty() {
            // d x2 / d e = −x2 / e
            let g_scale: Vec<T> = g_x2_total
                .iter()
                .zip(&cache.x2)
                .zip(&cache.scale)
                .map(|((&g, &x), &e)| -g * x / e)
                .collect();
            self.rho_backward(store, &cache.y1, cache.rho.as_ref(), &cache.scale, &g_scale, &mut g_y1, grads);
        }
        let _ = &cache.x1;
        (g_y1, g_y2)
    }
}

//! Information compensation: a residual latent alignment network (LAN)
//! applied to the detected features, and a learnable isotropic Gaussian
//! prior for the auxiliary variable.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::{Grads, ParamId, ParamStore};
use crate::error::{shape, Result};
use crate::mathx::{sigmoid, softplus, softplus_inv};
use crate::nn::{ResidualConvNet, Spatial, SubnetCache};
use crate::tensor::{Scalar, Tensor};

/// `ẑ = v̂ + cnn(v̂)` on the `(c, h, w)` latent layout. The output convolution
/// starts at zero, so a fresh LAN is the identity.
#[derive(Debug, Clone)]
pub struct Lan {
    pub net: ResidualConvNet,
    pub channels: usize,
    pub spatial: Spatial,
}

pub type LanCache<T> = SubnetCache<T>;

impl Lan {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        channels: usize,
        spatial: Spatial,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let net = ResidualConvNet::new(store, "lan", channels, hidden, channels, spatial, rng);
        Self { net, channels, spatial }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }

    pub fn len(&self) -> usize {
        self.channels * self.spatial.area()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, v: &[T]) -> Result<(Vec<T>, LanCache<T>)> {
        if v.len() != self.len() {
            return shape(format!("LAN expects {} features, got {}", self.len(), v.len()));
        }
        let (mut out, cache) = self.net.forward(store, v, self.spatial);
        out.iter_mut().zip(v).for_each(|(o, &x)| *o += x);
        Ok((out, cache))
    }

    /// Returns `dL/dv̂`.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        v: &[T],
        cache: &LanCache<T>,
        g_out: &[T],
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let mut g = self.net.backward(store, v, cache, g_out, self.spatial, grads);
        g.iter_mut().zip(g_out).for_each(|(a, &b)| *a += b);
        g
    }
}

/// `r = σ·e + μ`, `σ = softplus(σ_raw)`.
#[derive(Debug, Clone, Copy)]
pub struct AuxPrior {
    pub dims: usize,
    pub mu: ParamId,
    pub sigma_raw: ParamId,
}

impl AuxPrior {
    /// Registers `μ = 0`, `σ = 1`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dims: usize) -> Self {
        let mu = store.insert("prior.mu", Tensor::zeros(&[dims]));
        let sigma_raw = store.insert("prior.sigma_raw", Tensor::scalar(softplus_inv(T::one())));
        Self { dims, mu, sigma_raw }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.mu, self.sigma_raw]
    }

    pub fn sigma<T: Scalar>(&self, store: &ParamStore<T>) -> T {
        softplus(store.get(self.sigma_raw)[0])
    }

    pub fn set_frozen<T: Scalar>(&self, store: &mut ParamStore<T>, frozen: bool) {
        for id in self.params() {
            store.set_trainable(id, !frozen);
        }
    }

    pub fn draw_noise<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        (0..self.dims)
            .map(|_| T::lit(StandardNormal.sample(rng)))
            .collect()
    }

    /// Reparameterized sample for a given standard-normal draw `e`.
    pub fn sample_with<T: Scalar>(&self, store: &ParamStore<T>, e: &[T]) -> Vec<T> {
        let sigma = self.sigma(store);
        e.iter().zip(store.get(self.mu)).map(|(&e, &m)| sigma * e + m).collect()
    }

    pub fn sample<T: Scalar, R: Rng>(&self, store: &ParamStore<T>, rng: &mut R) -> (Vec<T>, Vec<T>) {
        let e = self.draw_noise(rng);
        (self.sample_with(store, &e), e)
    }

    /// Accumulates `dL/dμ` and `dL/dσ_raw` for a sample drawn with noise `e`.
    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, e: &[T], g_r: &[T], grads: &mut Grads<T>) {
        grads.get_mut(self.mu).iter_mut().zip(g_r).for_each(|(a, &b)| *a += b);
        let g_sigma: T = g_r.iter().zip(e).map(|(&g, &e)| g * e).sum();
        grads.get_mut(self.sigma_raw)[0] += g_sigma * sigmoid(store.get(self.sigma_raw)[0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_diff_grad, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lan(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> Lan {
        Lan::new(store, 2, Spatial { height: 1, width: 8 }, 16, rng)
    }

    #[test]
    fn fresh_lan_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let l = lan(&mut store, &mut rng);
        let v: Vec<f64> = (0..16).map(|k| (k as f64).sin() * 3.0).collect();
        assert_eq!(l.apply(&store, &v).unwrap().0, v);
        assert!(l.apply(&store, &v[..3]).is_err());
    }

    #[test]
    fn lan_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let l = lan(&mut store, &mut rng);
        for id in l.params() {
            for w in store.get_mut(id) {
                *w = rng.random_range(-0.5..0.5);
            }
        }
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = l.apply(&store, &v).unwrap();
        let mut grads = store.zero_grads_like();
        let g = l.backward(&store, &v, &cache, &u, &mut grads);
        let fd = finite_diff_grad(
            |x| l.apply(&store, x).unwrap().0.iter().zip(&u).map(|(a, b)| a * b).sum(),
            &v,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&g, &fd, 1e-8) < 1e-6);

        let w = l.net.hidden.weight;
        let w0 = store.get(w).to_vec();
        let fd = finite_diff_grad(
            |x| {
                let mut s = store.clone();
                s.get_mut(w).copy_from_slice(x);
                l.apply(&s, &v).unwrap().0.iter().zip(&u).map(|(a, b)| a * b).sum()
            },
            &w0,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(grads.get(w), &fd, 1e-8) < 1e-6);
    }

    #[test]
    fn prior_sampling() {
        let mut store = ParamStore::<f64>::new();
        let prior = AuxPrior::new(&mut store, 4);
        assert!((prior.sigma(&store) - 1.0).abs() < 1e-12);
        store.get_mut(prior.mu).copy_from_slice(&[1.0, -2.0, 0.5, 0.0]);
        store.get_mut(prior.sigma_raw)[0] = softplus_inv(1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (r, _) = prior.sample(&store, &mut rng);
        for (a, b) in r.iter().zip(store.get(prior.mu)) {
            assert!((a - b).abs() <= 1e-7);
        }
        let again = prior.sample(&store, &mut ChaCha8Rng::seed_from_u64(3)).0;
        assert_eq!(r, again);
    }

    #[test]
    fn prior_gradients() {
        let mut store = ParamStore::<f64>::new();
        let prior = AuxPrior::new(&mut store, 3);
        store.get_mut(prior.mu).copy_from_slice(&[0.2, -0.1, 0.7]);
        store.get_mut(prior.sigma_raw)[0] = 0.3;
        let e = [0.5, -1.2, 2.0];
        let u = [1.0, 0.4, -0.3];
        let mut grads = store.zero_grads_like();
        prior.backward(&store, &e, &u, &mut grads);
        let mut x = store.get(prior.mu).to_vec();
        x.push(0.3);
        let fd = finite_diff_grad(
            |x| {
                let mut s = store.clone();
                s.get_mut(prior.mu).copy_from_slice(&x[..3]);
                s.get_mut(prior.sigma_raw)[0] = x[3];
                prior.sample_with(&s, &e).iter().zip(&u).map(|(a, b)| a * b).sum()
            },
            &x,
            1e-5,
        )
        .unwrap();
        let mut g = grads.get(prior.mu).to_vec();
        g.push(grads.get(prior.sigma_raw)[0]);
        assert!(relative_error(&g, &fd, 1e-8) < 1e-8);
    }
}

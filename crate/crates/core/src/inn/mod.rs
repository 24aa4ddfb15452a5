//! The invertible network: stacked affine coupling blocks with fixed
//! channel permutations in between. The encoder (`forward`) and decoder
//! (`inverse`) read the same parameter entries.

mod coupling;

pub use coupling::{BlockGeometry, CouplingBlock, CouplingCache, RhoMode, RHO_CLAMP};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chansim::Segmenter;
use crate::diff::{Grads, ParamId, ParamStore};
use crate::error::{shape, Result};
use crate::tensor::Scalar;

/// Channel permutation over the patched layout: output channel `k` takes
/// input channel `order[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPermutation {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl ChannelPermutation {
    pub fn new(order: Vec<usize>) -> Self {
        let mut inverse = vec![0; order.len()];
        for (k, &src) in order.iter().enumerate() {
            inverse[src] = k;
        }
        Self { order, inverse }
    }

    pub fn random<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..channels).collect();
        order.shuffle(rng);
        Self::new(order)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse_order(&self) -> &[usize] {
        &self.inverse
    }

    fn gather<T: Scalar>(map: &[usize], x: &[T], area: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        for &src in map {
            out.extend_from_slice(&x[src * area..(src + 1) * area]);
        }
        out
    }

    pub fn apply<T: Scalar>(&self, x: &[T], area: usize) -> Vec<T> {
        Self::gather(&self.order, x, area)
    }

    pub fn undo<T: Scalar>(&self, x: &[T], area: usize) -> Vec<T> {
        Self::gather(&self.inverse, x, area)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub rho: RhoMode,
    pub perm_seed: u64,
}

impl Default for InnConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            hidden: 32,
            rho: RhoMode::Disabled,
            perm_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnModel {
    pub segmenter: Segmenter,
    pub blocks: Vec<CouplingBlock>,
    pub perms: Vec<ChannelPermutation>,
}

/// Per-block caches of one forward or inverse pass.
#[derive(Debug, Clone)]
pub struct InnCache<T> {
    blocks: Vec<CouplingCache<T>>,
}

impl InnModel {
    /// Registers all coupling parameters in `store`. Permutations are
    /// regenerated from `config.perm_seed`.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        segmenter: Segmenter,
        config: &InnConfig,
        rng: &mut R,
    ) -> Self {
        let geometry = BlockGeometry {
            c1: segmenter.split,
            c2: segmenter.channels() - segmenter.split,
            spatial: segmenter.spatial(),
        };
        let blocks = (0..config.blocks)
            .map(|i| CouplingBlock::new(store, i, geometry, config.hidden, config.rho, rng))
            .collect();
        let mut perm_rng = ChaCha8Rng::seed_from_u64(config.perm_seed);
        let perms = (0..config.blocks.saturating_sub(1))
            .map(|_| ChannelPermutation::random(segmenter.channels(), &mut perm_rng))
            .collect();
        Self {
            segmenter,
            blocks,
            perms,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    pub fn latent_len(&self) -> usize {
        self.segmenter.latent_len()
    }

    pub fn aux_len(&self) -> usize {
        self.segmenter.aux_len()
    }

    fn area(&self) -> usize {
        self.segmenter.spatial().area()
    }

    /// `H → (z, r)`.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Result<(Vec<T>, Vec<T>, InnCache<T>)> {
        let m = self.latent_len();
        let mut h = self.segmenter.segment(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let (y1, y2, cache) = block.forward(store, &h[..m], &h[m..])?;
            caches.push(cache);
            h = y1;
            h.extend(y2);
            if let Some(p) = self.perms.get(i) {
                h = p.apply(&h, self.area());
            }
        }
        let r = h.split_off(m);
        Ok((h, r, InnCache { blocks: caches }))
    }

    /// Backpropagates `(dL/dz, dL/dr)` through [`forward`](Self::forward);
    /// returns `dL/dH`.
    pub fn forward_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &InnCache<T>,
        g_z: &[T],
        g_r: &[T],
        grads: &mut Grads<T>,
    ) -> Result<Vec<T>> {
        let m = self.latent_len();
        let mut g: Vec<T> = g_z.iter().chain(g_r).copied().collect();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            if let Some(p) = self.perms.get(i) {
                g = p.undo(&g, self.area());
            }
            let (g1, g2) = block.forward_backward(store, &cache.blocks[i], &g[..m], &g[m..], grads);
            g = g1;
            g.extend(g2);
        }
        self.segmenter.desegment(&g)
    }

    /// `(z, r) → H`.
    pub fn inverse<T: Scalar>(&self, store: &ParamStore<T>, z: &[T], r: &[T]) -> Result<(Vec<T>, InnCache<T>)> {
        let m = self.latent_len();
        if z.len() != m || r.len() != self.aux_len() {
            return shape(format!(
                "inverse expects (z, r) of lengths ({m}, {}), got ({}, {})",
                self.aux_len(),
                z.len(),
                r.len()
            ));
        }
        let mut h: Vec<T> = z.iter().chain(r).copied().collect();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate().rev() {
            if let Some(p) = self.perms.get(i) {
                h = p.undo(&h, self.area());
            }
            let (x1, x2, cache) = block.inverse(store, &h[..m], &h[m..])?;
            caches.push(cache);
            h = x1;
            h.extend(x2);
        }
        caches.reverse();
        Ok((self.segmenter.desegment(&h)?, InnCache { blocks: caches }))
    }

    /// Backpropagates `dL/dH` through [`inverse`](Self::inverse); returns
    /// `(dL/dz, dL/dr)`.
    pub fn inverse_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cache: &InnCache<T>,
        g_x: &[T],
        grads: &mut Grads<T>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let m = self.latent_len();
        let mut g = self.segmenter.segment(g_x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let (g1, g2) = block.inverse_backward(store, &cache.blocks[i], &g[..m], &g[m..], grads);
            g = g1;
            g.extend(g2);
            if let Some(p) = self.perms.get(i) {
                g = p.apply(&g, self.area());
            }
        }
        let g_r = g.split_off(m);
        Ok((g, g_r))
    }
}

use rand::Rng;

use super::{leaky_relu, leaky_relu_grad, Conv3x3, Spatial};
use crate::diff::{Grads, ParamId, ParamStore};
use crate::tensor::Scalar;

/// `conv3x3 → leaky ReLU → concat(input, hidden) → conv3x3`.
///
/// The output convolution is zero-initialized, so a fresh network maps
/// every input to zero.
#[derive(Debug, Clone)]
pub struct ResidualConvNet {
    pub hidden: Conv3x3,
    pub output: Conv3x3,
}

#[derive(Debug, Clone)]
pub struct SubnetCache<T> {
    pre: Vec<T>,
    concat: Vec<T>,
}

impl ResidualConvNet {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        hidden_ch: usize,
        out_ch: usize,
        spatial: Spatial,
        rng: &mut R,
    ) -> Self {
        let hidden = Conv3x3::new(store, &format!("{name}.conv1"), in_ch, hidden_ch, spatial, rng);
        let output = Conv3x3::zeros(store, &format!("{name}.conv2"), in_ch + hidden_ch, out_ch, spatial);
        Self { hidden, output }
    }

    pub fn in_ch(&self) -> usize {
        self.hidden.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.output.out_ch
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.hidden.params().to_vec();
        p.extend(self.output.params());
        p
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], sp: Spatial) -> (Vec<T>, SubnetCache<T>) {
        let pre = self.hidden.forward(store, x, sp);
        let mut concat = Vec::with_capacity(x.len() + pre.len());
        concat.extend_from_slice(x);
        concat.extend(pre.iter().map(|&v| leaky_relu(v)));
        let out = self.output.forward(store, &concat, sp);
        (out, SubnetCache { pre, concat })
    }

    pub fn eval<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], sp: Spatial) -> Vec<T> {
        self.forward(store, x, sp).0
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        cache: &SubnetCache<T>,
        grad_out: &[T],
        sp: Spatial,
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let g_concat = self.output.backward(store, &cache.concat, grad_out, sp, grads);
        let n_in = x.len();
        let mut g_pre: Vec<T> = g_concat[n_in..].to_vec();
        for (g, &p) in g_pre.iter_mut().zip(&cache.pre) {
            *g *= leaky_relu_grad(p);
        }
        let mut g_x = self.hidden.backward(store, x, &g_pre, sp, grads);
        for (a, &b) in g_x.iter_mut().zip(&g_concat[..n_in]) {
            *a += b;
        }
        g_x
    }
}

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::diff::{Grads, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Spatial extent (height, width) of a channel-major feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub height: usize,
    pub width: usize,
}

impl Spatial {
    pub fn area(self) -> usize {
        self.height * self.width
    }
}

/// 3×3 convolution, stride 1, zero padding 1, on `(channels, height, width)`
/// maps stored channel-major.
///
/// Kernel taps that can only ever read padding (the off-centre rows of a
/// single-row map, say) are not allocated; the weight tensor has shape
/// `(out, in, taps)` with the live taps in row-major kernel order.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub spatial: Spatial,
    taps: Vec<Tap>,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3x3 {
    /// Kaiming-uniform weights scaled by one half, zero bias.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        spatial: Spatial,
        rng: &mut R,
    ) -> Self {
        let taps = active_taps(spatial);
        let fan_in = (in_ch * taps.len()).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt() * 0.5;
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w: Vec<T> = (0..out_ch * in_ch * taps.len())
            .map(|_| T::lit(dist.sample(rng)))
            .collect();
        Self::with_values(store, name, in_ch, out_ch, spatial, taps, w)
    }

    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_ch: usize, out_ch: usize, spatial: Spatial) -> Self {
        let taps = active_taps(spatial);
        let w = vec![T::zero(); out_ch * in_ch * taps.len()];
        Self::with_values(store, name, in_ch, out_ch, spatial, taps, w)
    }

    fn with_values<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        spatial: Spatial,
        taps: Vec<Tap>,
        w: Vec<T>,
    ) -> Self {
        let weight = store.insert(
            &format!("{name}.weight"),
            Tensor::from_vec(&[out_ch, in_ch, taps.len()], w).expect("weight extents"),
        );
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self {
            in_ch,
            out_ch,
            spatial,
            taps,
            weight,
            bias,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Position of kernel tap `(ky, kx)` in the weight's last axis, if live.
    pub fn tap_index(&self, ky: usize, kx: usize) -> Option<usize> {
        self.taps.iter().position(|t| t.index == ky * 3 + kx)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], sp: Spatial) -> Vec<T> {
        let area = sp.area();
        debug_assert_eq!(x.len(), self.in_ch * area);
        debug_assert_eq!(sp, self.spatial);
        let taps = &self.taps;
        let cols = im2col(x, self.in_ch, sp, taps);
        let weight = store.get(self.weight);
        let bias = store.get(self.bias);
        let mut out = vec![T::zero(); self.out_ch * area];
        for (o, map) in out.chunks_exact_mut(area.max(1)).enumerate() {
            map.fill(bias[o]);
        }
        let nt = taps.len();
        let row = (self.in_ch * nt) as isize;
        for t in 0..nt {
            T::gemm(
                self.out_ch,
                self.in_ch,
                area,
                T::one(),
                (&weight[t..], row, nt as isize),
                (&cols[t * self.in_ch * area..], area as isize, 1),
                T::one(),
                (&mut out, area as isize, 1),
            );
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        grad_out: &[T],
        sp: Spatial,
        grads: &mut Grads<T>,
    ) -> Vec<T> {
        let area = sp.area();
        debug_assert_eq!(sp, self.spatial);
        let taps = &self.taps;
        {
            let gb = grads.get_mut(self.bias);
            for o in 0..self.out_ch {
                gb[o] += grad_out[o * area..(o + 1) * area].iter().copied().sum::<T>();
            }
        }
        let cols = im2col(x, self.in_ch, sp, taps);
        let nt = taps.len();
        let row = (self.in_ch * nt) as isize;
        let block = self.in_ch * area;
        {
            let gw = grads.get_mut(self.weight);
            for t in 0..nt {
                T::gemm(
                    self.out_ch,
                    area,
                    self.in_ch,
                    T::one(),
                    (grad_out, area as isize, 1),
                    (&cols[t * block..], 1, area as isize),
                    T::one(),
                    (&mut gw[t..], row, nt as isize),
                );
            }
        }
        let weight = store.get(self.weight);
        let mut g_cols = vec![T::zero(); nt * block];
        for t in 0..nt {
            T::gemm(
                self.in_ch,
                self.out_ch,
                area,
                T::one(),
                (&weight[t..], nt as isize, row),
                (grad_out, area as isize, 1),
                T::zero(),
                (&mut g_cols[t * block..(t + 1) * block], area as isize, 1),
            );
        }
        col2im(&g_cols, self.in_ch, sp, taps)
    }
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    index: usize,
    dy: isize,
    dx: isize,
}

/// Kernel taps that reach at least one in-bounds pixel. On a single-row
/// map only the middle kernel row survives.
fn active_taps(sp: Spatial) -> Vec<Tap> {
    let mut taps = Vec::with_capacity(9);
    for ky in 0..3 {
        let dy = ky as isize - 1;
        if dy != 0 && sp.height < 2 {
            continue;
        }
        for kx in 0..3 {
            let dx = kx as isize - 1;
            if dx != 0 && sp.width < 2 {
                continue;
            }
            taps.push(Tap { index: ky * 3 + kx, dy, dx });
        }
    }
    taps
}

/// Valid output columns `[x0, x1)` for a horizontal offset.
fn col_range(dx: isize, w: usize) -> (usize, usize) {
    (usize::from(dx < 0), if dx > 0 { w - 1 } else { w })
}

/// Row `(tap, i)` of the result holds input channel `i` shifted by the tap
/// offset, zero outside the map.
fn im2col<T: Scalar>(x: &[T], in_ch: usize, sp: Spatial, taps: &[Tap]) -> Vec<T> {
    let (h, w) = (sp.height, sp.width);
    let area = sp.area();
    let mut cols = vec![T::zero(); in_ch * taps.len() * area];
    for i in 0..in_ch {
        let src = &x[i * area..(i + 1) * area];
        for (t, tap) in taps.iter().enumerate() {
            let dst = &mut cols[(t * in_ch + i) * area..(t * in_ch + i + 1) * area];
            let (x0, x1) = col_range(tap.dx, w);
            for y in 0..h {
                let yy = y as isize + tap.dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let s = (yy as usize * w) as isize + tap.dx;
                let s0 = (s + x0 as isize) as usize;
                dst[y * w + x0..y * w + x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], in_ch: usize, sp: Spatial, taps: &[Tap]) -> Vec<T> {
    let (h, w) = (sp.height, sp.width);
    let area = sp.area();
    let mut x = vec![T::zero(); in_ch * area];
    for i in 0..in_ch {
        let dst = &mut x[i * area..(i + 1) * area];
        for (t, tap) in taps.iter().enumerate() {
            let src = &cols[(t * in_ch + i) * area..(t * in_ch + i + 1) * area];
            let (x0, x1) = col_range(tap.dx, w);
            for y in 0..h {
                let yy = y as isize + tap.dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let s0 = ((yy as usize * w) as isize + tap.dx + x0 as isize) as usize;
                for (d, &g) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                    *d += g;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple-loop convolution.
    fn naive(weight: &[f64], bias: &[f64], x: &[f64], cin: usize, cout: usize, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * cin + i) * 3 + ky) * 3 + kx]
                                    * x[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    /// Expands the stored live taps into a dense `(out, in, 3, 3)` kernel.
    fn dense_kernel(conv: &Conv3x3, store: &ParamStore<f64>) -> Vec<f64> {
        let w = store.get(conv.weight);
        let nt = w.len() / (conv.out_ch * conv.in_ch);
        let mut dense = vec![0.0; conv.out_ch * conv.in_ch * 9];
        for oi in 0..conv.out_ch * conv.in_ch {
            for k in 0..9 {
                if let Some(t) = conv.tap_index(k / 3, k % 3) {
                    dense[oi * 9 + k] = w[oi * nt + t];
                }
            }
        }
        dense
    }

    #[test]
    fn padding_only_taps_are_not_allocated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        for (i, (sp, taps)) in [((1, 7), 3), ((4, 1), 3), ((1, 1), 1), ((2, 2), 9)].into_iter().enumerate() {
            let conv = Conv3x3::new(&mut store, &format!("c{i}"), 2, 3, Spatial { height: sp.0, width: sp.1 }, &mut rng);
            assert_eq!(store.get(conv.weight).len(), 2 * 3 * taps);
        }
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(h, w) in &[(1usize, 7usize), (3, 5), (4, 4), (1, 1)] {
            let mut store = ParamStore::<f64>::new();
            let sp = Spatial { height: h, width: w };
            let conv = Conv3x3::new(&mut store, "c", 3, 2, sp, &mut rng);
            store.get_mut(conv.bias).copy_from_slice(&[0.3, -0.2]);
            let x: Vec<f64> = (0..3 * h * w).map(|k| (k as f64 * 0.37).sin()).collect();
            let got = conv.forward(&store, &x, sp);
            let want = naive(&dense_kernel(&conv, &store), store.get(conv.bias), &x, 3, 2, h, w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(h, w) in &[(1usize, 5usize), (3, 4), (2, 1)] {
            let sp = Spatial { height: h, width: w };
            let mut store = ParamStore::<f64>::new();
            let conv = Conv3x3::new(&mut store, "c", 2, 3, sp, &mut rng);
            let x: Vec<f64> = (0..2 * h * w).map(|k| (k as f64 * 0.61).cos()).collect();
            let up: Vec<f64> = (0..3 * h * w).map(|k| (k as f64 * 0.29).sin()).collect();
            let objective = |store: &ParamStore<f64>, x: &[f64]| -> f64 {
                conv.forward(store, x, sp).iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let mut grads = store.zero_grads_like();
            let gx = conv.backward(&store, &x, &up, sp, &mut grads);
            let eps = 1e-6;
            for j in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (objective(&store, &xp) - objective(&store, &xm)) / (2.0 * eps);
                assert!((fd - gx[j]).abs() < 1e-8, "input {j}: {fd} vs {}", gx[j]);
            }
            for id in conv.params() {
                for j in 0..store.get(id).len() {
                    let mut sp_ = store.clone();
                    sp_.get_mut(id)[j] += eps;
                    let mut sm = store.clone();
                    sm.get_mut(id)[j] -= eps;
                    let fd = (objective(&sp_, &x) - objective(&sm, &x)) / (2.0 * eps);
                    let an = grads.get(id)[j];
                    assert!((fd - an).abs() < 1e-8, "param {j}: {fd} vs {an}");
                }
            }
        }
    }
}

//! Sample-based training objectives: joint-kernel MMD between latent
//! batches and the squared-error reconstruction loss.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::tensor::{sq_dist, Scalar};

pub const DEFAULT_KERNEL_C: f64 = 1000.0;
pub const DEFAULT_KAPPA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    pub c: f64,
    pub kappa: f64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_KERNEL_C,
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return invalid(format!("kernel constant C must be positive, got {}", self.c));
        }
        if !(self.kappa > 0.0) {
            return invalid(format!("trade-off κ must be positive, got {}", self.kappa));
        }
        Ok(())
    }
}

/// Inverse multiquadric kernel `C / (C + ‖x − y‖²)`.
pub fn imq_kernel<T: Scalar>(x: &[T], y: &[T], c: T) -> T {
    c / (c + sq_dist(x, y))
}

/// `∂k(x, y)/∂x = −2k²(x − y)/C`.
pub fn imq_kernel_grad<T: Scalar>(x: &[T], y: &[T], c: T) -> Vec<T> {
    let k = imq_kernel(x, y, c);
    let s = T::lit(-2.0) * k * k / c;
    x.iter().zip(y).map(|(&a, &b)| s * (a - b)).collect()
}

/// A batch of `len` joint samples stored as row-major `(len, dz)` and
/// `(len, dr)` matrices.
#[derive(Debug, Clone, Copy)]
pub struct JointBatch<'a, T> {
    pub z: &'a [T],
    pub r: &'a [T],
    pub len: usize,
}

impl<'a, T: Scalar> JointBatch<'a, T> {
    pub fn new(z: &'a [T], r: &'a [T], len: usize) -> Result<Self> {
        if len == 0 || z.len() % len != 0 || r.len() % len != 0 {
            return shape(format!(
                "batch of {len} rows cannot hold {} latent and {} auxiliary values",
                z.len(),
                r.len()
            ));
        }
        Ok(Self { z, r, len })
    }

    fn dz(&self) -> usize {
        self.z.len() / self.len
    }

    fn dr(&self) -> usize {
        self.r.len() / self.len
    }
}

/// Gradients of [`mmd2_joint`] with respect to each of the four inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdGrads<T> {
    pub a_z: Vec<T>,
    pub a_r: Vec<T>,
    pub b_z: Vec<T>,
    pub b_r: Vec<T>,
}

fn check_pair<T: Scalar>(a: &JointBatch<'_, T>, b: &JointBatch<'_, T>) -> Result<()> {
    if a.len != b.len {
        return shape(format!("MMD batches differ in size: {} vs {}", a.len, b.len));
    }
    if a.len < 2 {
        return invalid("MMD needs at least two samples per batch");
    }
    if a.dz() != b.dz() || a.dr() != b.dr() {
        return shape("MMD batches differ in feature dimension");
    }
    Ok(())
}

/// Pairwise `‖x_i − y_j‖²` for row-major `(n, d)` and `(m, d)` matrices,
/// through the Gram matrix. `same` marks `x == y`, whose diagonal is set to
/// exactly zero.
fn pairwise_sq_dists<T: Scalar>(x: &[T], y: &[T], d: usize, same: bool) -> Vec<T> {
    let (n, m) = (x.len() / d.max(1), y.len() / d.max(1));
    let mut out = vec![T::zero(); n * m];
    if d == 0 {
        return out;
    }
    let norms = |v: &[T]| -> Vec<T> { v.chunks_exact(d).map(|row| row.iter().map(|&e| e * e).sum()).collect() };
    let (nx, ny) = (norms(x), norms(y));
    T::gemm(
        n,
        d,
        m,
        T::lit(-2.0),
        (x, d as isize, 1),
        (y, 1, d as isize),
        T::zero(),
        (&mut out, m as isize, 1),
    );
    for (i, row) in out.chunks_exact_mut(m).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if same && i == j { T::zero() } else { (*v + nx[i] + ny[j]).max(T::zero()) };
        }
    }
    out
}

/// IMQ kernel matrices over the latent and auxiliary parts for one pair of
/// batches.
struct KernelPair<T> {
    kz: Vec<T>,
    kr: Vec<T>,
}

impl<T: Scalar> KernelPair<T> {
    fn new(x: &JointBatch<'_, T>, y: &JointBatch<'_, T>, c: T, same: bool) -> Self {
        let imq = |d: Vec<T>| d.into_iter().map(|v| c / (c + v)).collect::<Vec<T>>();
        Self {
            kz: imq(pairwise_sq_dists(x.z, y.z, x.dz(), same)),
            kr: imq(pairwise_sq_dists(x.r, y.r, x.dr(), same)),
        }
    }

    fn sum(&self) -> T {
        self.kz.iter().zip(&self.kr).map(|(&a, &b)| a * b).sum()
    }
}

/// For `Σ_ij F_ij ‖x_i − y_j‖²`-shaped terms: adds `Σ_j F_ij (x_i − y_j)` to
/// `gx_i` and, when given, `−Σ_i F_ij (x_i − y_j)` to `gy_j`.
fn accumulate_pair_grad<T: Scalar>(f: &[T], x: &[T], y: &[T], d: usize, gx: &mut [T], gy: Option<&mut [T]>) {
    if d == 0 {
        return;
    }
    let (n, m) = (x.len() / d, y.len() / d);
    for (i, row) in f.chunks_exact(m).enumerate() {
        let s: T = row.iter().copied().sum();
        for (g, &v) in gx[i * d..(i + 1) * d].iter_mut().zip(&x[i * d..(i + 1) * d]) {
            *g += s * v;
        }
    }
    T::gemm(n, m, d, -T::one(), (f, m as isize, 1), (y, d as isize, 1), T::one(), (gx, d as isize, 1));
    if let Some(gy) = gy {
        for j in 0..m {
            let s: T = (0..n).map(|i| f[i * m + j]).sum();
            for (g, &v) in gy[j * d..(j + 1) * d].iter_mut().zip(&y[j * d..(j + 1) * d]) {
                *g += s * v;
            }
        }
        T::gemm(m, n, d, -T::one(), (f, 1, m as isize), (x, d as isize, 1), T::one(), (gy, d as isize, 1));
    }
}

/// Biased (V-statistic) MMD² with the product kernel `k(z,z')·k(r,r')`:
///
/// `(1/L²) Σ_ij [k(a_i,a_j) + k(b_i,b_j) − 2 k(a_i,b_j)]`.
pub fn mmd2_joint<T: Scalar>(a: &JointBatch<'_, T>, b: &JointBatch<'_, T>, c: T) -> Result<T> {
    check_pair(a, b)?;
    let l = a.len;
    let aa = KernelPair::new(a, a, c, true).sum();
    let bb = KernelPair::new(b, b, c, true).sum();
    let ab = KernelPair::new(a, b, c, false).sum();
    Ok((aa + bb - T::lit(2.0) * ab) / T::lit((l * l) as f64))
}

/// `dMMD²/d(inputs)` scaled by `upstream`.
pub fn mmd2_joint_backward<T: Scalar>(
    a: &JointBatch<'_, T>,
    b: &JointBatch<'_, T>,
    c: T,
    upstream: T,
) -> Result<MmdGrads<T>> {
    check_pair(a, b)?;
    let l = a.len;
    let (dz, dr) = (a.dz(), a.dr());
    let mut g = MmdGrads {
        a_z: vec![T::zero(); a.z.len()],
        a_r: vec![T::zero(); a.r.len()],
        b_z: vec![T::zero(); b.z.len()],
        b_r: vec![T::zero(); b.r.len()],
    };
    let scale = upstream / T::lit((l * l) as f64);

    // A term w·kz·kr has derivative w·(dkz·kr, kz·dkr) w.r.t. x_i, where
    // dk = −2k²(x − y)/C. Within-batch sums count each pair twice.
    let factors = |kp: &KernelPair<T>, w: T| -> (Vec<T>, Vec<T>) {
        let s = w * scale * T::lit(-2.0) / c;
        let fz = kp.kz.iter().zip(&kp.kr).map(|(&kz, &kr)| s * kz * kz * kr).collect();
        let fr = kp.kz.iter().zip(&kp.kr).map(|(&kz, &kr)| s * kr * kr * kz).collect();
        (fz, fr)
    };
    let two = T::lit(2.0);
    for (x, gz, gr) in [(a, &mut g.a_z, &mut g.a_r), (b, &mut g.b_z, &mut g.b_r)] {
        let (fz, fr) = factors(&KernelPair::new(x, x, c, true), two);
        accumulate_pair_grad(&fz, x.z, x.z, dz, gz, None);
        accumulate_pair_grad(&fr, x.r, x.r, dr, gr, None);
    }
    let (fz, fr) = factors(&KernelPair::new(a, b, c, false), -two);
    accumulate_pair_grad(&fz, a.z, b.z, dz, &mut g.a_z, Some(&mut g.b_z));
    accumulate_pair_grad(&fr, a.r, b.r, dr, &mut g.a_r, Some(&mut g.b_r));
    Ok(g)
}

/// Batch-mean squared Frobenius error `(1/L) Σ ‖ĥ_i − h_i‖²`.
pub fn loss_recon<T: Scalar>(h_hat: &[T], h: &[T], batch: usize) -> Result<T> {
    if h_hat.len() != h.len() {
        return shape(format!("reconstruction has {} values, target {}", h_hat.len(), h.len()));
    }
    if batch == 0 {
        return invalid("empty batch");
    }
    Ok(sq_dist(h_hat, h) / T::lit(batch as f64))
}

/// `dL_H/dĥ`.
pub fn loss_recon_backward<T: Scalar>(h_hat: &[T], h: &[T], batch: usize) -> Vec<T> {
    let s = T::lit(2.0 / batch as f64);
    h_hat.iter().zip(h).map(|(&a, &b)| s * (a - b)).collect()
}

/// `L_H + κ·L_r`; rejects `κ ≤ 0`.
pub fn total_loss(recon: f64, forward: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return invalid(format!("trade-off κ must be positive, got {kappa}"));
    }
    Ok(recon + kappa * forward)
}

/// Forward (distribution-matching) loss and the pieces needed for its
/// gradient. The reference set pairs a batch permutation of the latent
/// with fresh auxiliary draws; latent gradients are stopped on both sides.
#[derive(Debug, Clone)]
pub struct ForwardLoss<T> {
    pub value: T,
    /// `dL_r/dr` for the model's auxiliary outputs.
    pub g_r: Vec<T>,
    /// `dL_r/dr'` for the reference auxiliary draws.
    pub g_ref_r: Vec<T>,
}

/// `MMD²({(z_i, r_i)}, {(z'_{perm(i)}, r'_i)})` where `z'` is `z` in the
/// ideal pipeline and `ẑ` in the practical one.
pub fn loss_forward<T: Scalar>(
    z: &[T],
    r: &[T],
    z_ref: &[T],
    perm: &[usize],
    r_ref: &[T],
    c: T,
) -> Result<ForwardLoss<T>> {
    let len = perm.len();
    let a = JointBatch::new(z, r, len)?;
    if z_ref.len() != z.len() {
        return shape("reference latent batch differs in size");
    }
    let dz = a.dz();
    let zp: Vec<T> = perm
        .iter()
        .flat_map(|&p| z_ref[p * dz..(p + 1) * dz].iter().copied())
        .collect();
    let b = JointBatch::new(&zp, r_ref, len)?;
    let value = mmd2_joint(&a, &b, c)?;
    let g = mmd2_joint_backward(&a, &b, c, T::one())?;
    Ok(ForwardLoss {
        value,
        g_r: g.a_r,
        g_ref_r: g.b_r,
    })
}

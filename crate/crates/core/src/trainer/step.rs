use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{Mode, Variant};
use crate::daq::{QuantPoints, QuantizerGrads, QuantizerParams};
use crate::dbcd::{channel_backward, channel_forward, sample_gumbel, ChannelPass, Tpm};
use crate::diff::Grads;
use crate::error::Result;
use crate::icm::LanCache;
use crate::inn::InnCache;
use crate::losses::{loss_forward, loss_recon, loss_recon_backward};
use crate::model::{awgn, InvCsiNet};
use crate::tensor::Scalar;

/// Which loss terms contribute gradients in one pass, and with what
/// weights. Both loss values are always computed for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub forward: f64,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome<T> {
    pub loss_h: f64,
    pub loss_r: f64,
    pub grads: Grads<T>,
}

/// Training-time latent path of one sample.
struct Latent<T> {
    z: Vec<T>,
    r: Vec<T>,
    cache: InnCache<T>,
    v: Vec<T>,
    passes: Vec<ChannelPass<T>>,
    v_hat: Vec<T>,
    lan: Option<LanCache<T>>,
    z_hat: Vec<T>,
}

struct Quant<T> {
    params: QuantizerParams<T>,
    points: QuantPoints<T>,
}

/// One forward/backward sweep over a batch. Randomness (Gumbel noise,
/// batch permutation, prior draws) is consumed from `rng` in an order that
/// does not depend on parameter values, so re-running with a cloned rng
/// reproduces the same noise.
pub fn batch_pass<T: Scalar, R: Rng>(
    net: &InvCsiNet<T>,
    tpm: Option<&Tpm>,
    xs: &[&[T]],
    terms: LossTerms,
    rng: &mut R,
) -> Result<BatchOutcome<T>> {
    let cfg = &net.config;
    let store = &net.store;
    let practical = cfg.mode == Mode::Practical;
    let l = xs.len();
    let temp = T::lit(cfg.temperature);
    let (beta, tau) = (T::lit(cfg.beta), T::lit(cfg.tau));
    let snr = cfg.snr_linear();

    let quant = practical.then(|| {
        let params = net.quantizer();
        let points = params.quant_points();
        Quant { params, points }
    });

    let mut rows = Vec::with_capacity(l);
    for x in xs {
        let (z, r, cache) = net.inn.forward(store, x)?;
        let mut row = Latent {
            v: Vec::new(),
            passes: Vec::new(),
            v_hat: Vec::new(),
            lan: None,
            z_hat: Vec::new(),
            z,
            r,
            cache,
        };
        match &quant {
            None => row.z_hat = row.z.clone(),
            Some(q) => {
                row.v = q.params.quantize_soft(&row.z, temp);
                if cfg.variant == Variant::NoDbcd {
                    row.v_hat = row.v.iter().map(|&v| v + T::lit(awgn(snr, rng))).collect();
                } else {
                    let tpm = tpm.expect("practical pass needs a TPM");
                    for (d, &v) in row.v.iter().enumerate() {
                        let noise = sample_gumbel(q.points.levels, rng);
                        row.passes.push(channel_forward(v, q.points.column(d), tpm, beta, tau, &noise));
                    }
                    row.v_hat = row.passes.iter().map(|p| p.v_hat).collect();
                }
                if net.uses_lan() {
                    let (z_hat, cache) = net.lan.apply(store, &row.v_hat)?;
                    row.z_hat = z_hat;
                    row.lan = Some(cache);
                } else {
                    row.z_hat = row.v_hat.clone();
                }
            }
        }
        rows.push(row);
    }

    let mut grads = store.zero_grads_like();
    let (m, a) = (net.latent_len(), net.aux_len());
    let mut g_z: Vec<Vec<T>> = vec![vec![T::zero(); m]; l];
    let mut g_r: Vec<Vec<T>> = vec![vec![T::zero(); a]; l];

    // distribution matching: {(z_i, r_i)} vs {(ẑ_perm(i), r'_i)}
    let mut perm: Vec<usize> = (0..l).collect();
    perm.shuffle(rng);
    let ref_noise: Vec<Vec<T>> = (0..l).map(|_| net.prior.draw_noise(rng)).collect();
    let zs: Vec<T> = rows.iter().flat_map(|r| r.z.iter().copied()).collect();
    let rs: Vec<T> = rows.iter().flat_map(|r| r.r.iter().copied()).collect();
    let zh: Vec<T> = rows.iter().flat_map(|r| r.z_hat.iter().copied()).collect();
    let r_ref: Vec<T> = ref_noise
        .iter()
        .flat_map(|e| net.prior.sample_with(store, e))
        .collect();
    let fwd = loss_forward(&zs, &rs, &zh, &perm, &r_ref, T::lit(cfg.mmd_c))?;
    let loss_r = fwd.value.to_f64_lossy();
    if terms.forward != 0.0 {
        let w = T::lit(terms.forward);
        for i in 0..l {
            for (g, &v) in g_r[i].iter_mut().zip(&fwd.g_r[i * a..(i + 1) * a]) {
                *g += w * v;
            }
            let gr: Vec<T> = fwd.g_ref_r[i * a..(i + 1) * a].iter().map(|&v| w * v).collect();
            net.prior.backward(store, &ref_noise[i], &gr, &mut grads);
        }
    }

    // reconstruction: g(ẑ, r ~ prior) against H
    let mut loss_h = 0.0;
    let mut qgrads = quant.as_ref().map(|q| QuantizerGrads::zeros(q.params.dims, q.params.bits));
    let mut g_levels = quant.as_ref().map(|q| vec![T::zero(); q.points.values.len()]);
    for (i, row) in rows.iter().enumerate() {
        let (r_s, e) = net.prior.sample(store, rng);
        let (x_hat, icache) = net.inn.inverse(store, &row.z_hat, &r_s)?;
        loss_h += loss_recon(&x_hat, xs[i], l)?.to_f64_lossy();
        if terms.recon == 0.0 {
            continue;
        }
        let mut g_x = loss_recon_backward(&x_hat, xs[i], l);
        let w = T::lit(terms.recon);
        g_x.iter_mut().for_each(|g| *g *= w);
        let (g_zh, g_rs) = net.inn.inverse_backward(store, &icache, &g_x, &mut grads)?;
        net.prior.backward(store, &e, &g_rs, &mut grads);
        let gz = match &quant {
            None => g_zh,
            Some(q) => {
                let g_vh = match &row.lan {
                    Some(c) => net.lan.backward(store, &row.v_hat, c, &g_zh, &mut grads),
                    None => g_zh,
                };
                let g_v = if row.passes.is_empty() {
                    g_vh
                } else {
                    let tpm = tpm.expect("practical pass needs a TPM");
                    let gl = g_levels.as_mut().expect("level buffer");
                    let ql = q.points.levels;
                    row.passes
                        .iter()
                        .enumerate()
                        .map(|(d, pass)| {
                            let col = q.points.column(d);
                            let (gv, glv) = channel_backward(row.v[d], col, tpm, beta, tau, pass, g_vh[d]);
                            for (acc, g) in gl[d * ql..(d + 1) * ql].iter_mut().zip(glv) {
                                *acc += g;
                            }
                            gv
                        })
                        .collect()
                };
                q.params
                    .quantize_soft_backward(&row.z, &g_v, temp, qgrads.as_mut().expect("quantizer grads"))
            }
        };
        g_z[i].iter_mut().zip(&gz).for_each(|(a, &b)| *a += b);
    }

    if let (Some(q), Some(mut qg), Some(gl)) = (&quant, qgrads, g_levels) {
        q.params.quant_points_backward(&gl, &mut qg);
        net.daq.backward(store, &qg, &mut grads);
    }
    if terms.recon != 0.0 || terms.forward != 0.0 {
        for (i, row) in rows.iter().enumerate() {
            net.inn.forward_backward(store, &row.cache, &g_z[i], &g_r[i], &mut grads)?;
        }
    }
    Ok(BatchOutcome { loss_h, loss_r, grads })
}

//! Fast invariant checks runnable from the command line: gradients,
//! bijectivity and the bit-channel oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chansim::{CsiDims, Segmenter};
use crate::daq::{soft_sign, soft_sign_grad, QuantizerGrads, QuantizerParams};
use crate::dbcd::{soft_index_map, soft_index_map_backward, tpm_bpsk_awgn, transmit_bits, BitCoder};
use crate::diff::{finite_diff_grad, relative_error, ParamStore};
use crate::inn::{InnConfig, InnModel, RhoMode};
use crate::losses::{mmd2_joint, mmd2_joint_backward, JointBatch};
use crate::mathx::db_to_linear;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    fn push(&mut self, suite: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
        .collect()
}

fn gradients(report: &mut SelftestReport, rng: &mut ChaCha8Rng) {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (x, t) = (rng.random_range(-2.0..2.0), rng.random_range(0.5..20.0));
        let fd = finite_diff_grad(|v| soft_sign(v[0], t), &[x], 1e-5).unwrap_or_default();
        worst = worst.max(relative_error(&[soft_sign_grad(x, t)], &fd, 1e-8));
    }
    report.push("gradient", "soft_sign", worst <= 1e-4, format!("max rel err {worst:.2e}"));

    let q = QuantizerParams::<f64>::uniform(3, 2, (-2.0, 2.0)).expect("valid quantizer");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
        let u = randn(rng, 3, 1.0);
        let mut g = QuantizerGrads::zeros(3, 2);
        let an = q.quantize_soft_backward(&z, &u, 10.0, &mut g);
        let fd = finite_diff_grad(
            |z| q.quantize_soft(z, 10.0).iter().zip(&u).map(|(a, b)| a * b).sum(),
            &z,
            1e-5,
        )
        .unwrap_or_default();
        worst = worst.max(relative_error(&an, &fd, 1e-8));
    }
    report.push("gradient", "quantize_soft", worst <= 1e-4, format!("max rel err {worst:.2e}"));

    let levels = [-1.5, -0.5, 0.5, 1.5];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let v = rng.random_range(-2.0..2.0);
        let u = randn(rng, 4, 1.0);
        let w = soft_index_map(v, &levels, 0.3);
        let (gv, _) = soft_index_map_backward(v, &levels, 0.3, &w, &u);
        let fd = finite_diff_grad(
            |x| soft_index_map(x[0], &levels, 0.3).iter().zip(&u).map(|(a, b)| a * b).sum(),
            &[v],
            1e-5,
        )
        .unwrap_or_default();
        worst = worst.max(relative_error(&[gv], &fd, 1e-8));
    }
    report.push("gradient", "soft_index_map", worst <= 1e-4, format!("max rel err {worst:.2e}"));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = randn(rng, 4 * 5, 1.0);
        let f = |x: &[f64]| {
            let a = JointBatch::new(&x[..4], &x[4..10], 2).expect("batch");
            let b = JointBatch::new(&x[10..14], &x[14..], 2).expect("batch");
            mmd2_joint(&a, &b, 2.0).unwrap_or(f64::NAN)
        };
        let fd = finite_diff_grad(f, &x, 1e-5).unwrap_or_default();
        let a = JointBatch::new(&x[..4], &x[4..10], 2).expect("batch");
        let b = JointBatch::new(&x[10..14], &x[14..], 2).expect("batch");
        let g = mmd2_joint_backward(&a, &b, 2.0, 1.0).expect("same shapes");
        let an: Vec<f64> = [g.a_z, g.a_r, g.b_z, g.b_r].concat();
        worst = worst.max(relative_error(&an, &fd, 1e-8));
    }
    report.push("gradient", "mmd2_joint", worst <= 1e-4, format!("max rel err {worst:.2e}"));
}

fn bijectivity(report: &mut SelftestReport, rng: &mut ChaCha8Rng) {
    let dims = CsiDims::DESK;
    for seed in 0..3u64 {
        let mut store = ParamStore::<f64>::new();
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let seg = Segmenter::new(dims, 4, 1).expect("desk geometry divides");
        let cfg = InnConfig {
            rho: RhoMode::Disabled,
            perm_seed: seed,
            ..InnConfig::default()
        };
        let model = InnModel::new(&mut store, seg, &cfg, &mut init);
        for id in store.ids().collect::<Vec<_>>() {
            let v = randn(&mut init, store.get(id).len(), 0.1);
            store.get_mut(id).copy_from_slice(&v);
        }
        let mut worst = 0.0f64;
        for _ in 0..16 {
            let x = randn(rng, dims.real_len(), 1.0);
            let back = model
                .forward(&store, &x)
                .and_then(|(z, r, _)| model.inverse(&store, &z, &r))
                .map(|(b, _)| b);
            let err = match back {
                Ok(b) => {
                    let num = b.iter().zip(&x).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
                    num / (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max))
                }
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        report.push(
            "bijectivity",
            format!("model seed {seed}"),
            worst <= 1e-10,
            format!("max rel err {worst:.2e}"),
        );
    }
}

fn tpm_oracle(report: &mut SelftestReport, rng: &mut ChaCha8Rng) {
    const TRIALS: usize = 20_000;
    for (bits, snr_db) in [(1u32, 0.0), (2, 5.0), (3, 10.0)] {
        let snr = db_to_linear(snr_db);
        let tpm = match tpm_bpsk_awgn(snr, bits, BitCoder::Natural) {
            Ok(t) => t,
            Err(e) => {
                report.push("tpm", format!("B={bits} {snr_db} dB"), false, e.to_string());
                continue;
            }
        };
        let q = tpm.size();
        let mut worst_z = 0.0f64;
        for j in 0..q {
            let mut counts = vec![0usize; q];
            for _ in 0..TRIALS / q {
                counts[transmit_bits(j, snr, bits, BitCoder::Natural, rng)] += 1;
            }
            let n = (TRIALS / q) as f64;
            for (i, &c) in counts.iter().enumerate() {
                let p = tpm.at(i, j);
                let sd = (p * (1.0 - p) / n).sqrt().max(1e-12);
                worst_z = worst_z.max(((c as f64 / n) - p).abs() / sd);
            }
        }
        let col_err = tpm.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        // 4σ keeps the quick suite's false-alarm rate negligible
        report.push(
            "tpm",
            format!("B={bits} {snr_db} dB"),
            worst_z <= 4.0 && col_err <= 1e-12,
            format!("max |z| {worst_z:.2}, column-sum err {col_err:.1e}"),
        );
    }
}

/// Runs every suite with a fixed seed.
pub fn run(seed: u64) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SelftestReport::default();
    gradients(&mut report, &mut rng);
    bijectivity(&mut report, &mut rng);
    tpm_oracle(&mut report, &mut rng);
    report
}

//! Reconstruction metrics, evaluation/ablation reports and parameter
//! counting.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::config::{Mode, Variant};
use crate::error::{invalid, shape, Error, Result};
use crate::losses::{mmd2_joint, JointBatch};
use crate::model::{stream_rng, InvCsiNet, Prepared, STREAM_METRIC};
use crate::tensor::Scalar;

/// Mean of per-sample `‖Ĥ − H‖²_F / ‖H‖²_F`.
pub fn nmse(h_hat: &[Vec<Complex64>], h: &[Vec<Complex64>]) -> Result<f64> {
    if h_hat.len() != h.len() || h.is_empty() {
        return shape(format!("NMSE needs equal non-empty lists, got {} and {}", h_hat.len(), h.len()));
    }
    let mut total = 0.0;
    for (k, (a, b)) in h_hat.iter().zip(h).enumerate() {
        if a.len() != b.len() {
            return shape(format!("sample {k}: {} vs {} entries", a.len(), b.len()));
        }
        let den: f64 = b.iter().map(|c| c.norm_sqr()).sum();
        if !(den > 0.0) {
            return invalid(format!("sample {k} has zero norm"));
        }
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        total += num / den;
    }
    Ok(total / h.len() as f64)
}

/// `10·log₁₀`, with exact reconstruction mapping to `−∞`.
pub fn to_db(linear: f64) -> f64 {
    if linear == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * linear.log10()
    }
}

/// Domain in which reconstructions are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    /// After the inverse DFT.
    #[default]
    Original,
    Angular,
}

/// Held-out NMSE in dB through the inference pipeline.
pub fn nmse_db_of<T: Scalar, R: Rng>(
    net: &InvCsiNet<T>,
    data: &Prepared<T>,
    rows: &[usize],
    pipeline: Mode,
    snr: f64,
    domain: Domain,
    rng: &mut R,
) -> Result<f64> {
    let mut hats = Vec::with_capacity(rows.len());
    let mut refs = Vec::with_capacity(rows.len());
    for &i in rows {
        let x_hat = net.reconstruct(&data.x[i], pipeline, snr, rng)?;
        match domain {
            Domain::Original => {
                hats.push(data.to_channel(&x_hat)?);
                refs.push(data.h[i].clone());
            }
            Domain::Angular => {
                hats.push(data.to_angular(&x_hat)?);
                refs.push(data.to_angular(&data.x[i])?);
            }
        }
    }
    Ok(to_db(nmse(&hats, &refs)?))
}

/// Forward MMD² on held-out rows: `{(z_i, r_i)}` against
/// `{(ẑ_perm(i), r'_i)}` with `r'` drawn from the prior and `ẑ` from the
/// inference path (`ẑ = z` in ideal mode).
pub fn held_out_mmd<T: Scalar, R: Rng>(
    net: &InvCsiNet<T>,
    data: &Prepared<T>,
    rows: &[usize],
    snr: f64,
    rng: &mut R,
) -> Result<f64> {
    if rows.len() < 2 {
        return Ok(0.0);
    }
    let (mut zs, mut rs, mut zh, mut rp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &i in rows {
        let (z, r) = net.encode(&data.x[i])?;
        let z_hat = match net.config.mode {
            Mode::Ideal => z.clone(),
            Mode::Practical => net.transmit(&z, snr, rng)?,
        };
        zs.push(z);
        rs.push(r);
        zh.push(z_hat);
    }
    let mut perm: Vec<usize> = (0..rows.len()).collect();
    perm.shuffle(rng);
    let mut zp = Vec::new();
    for &p in &perm {
        zp.extend_from_slice(&zh[p]);
        rp.extend(net.prior.sample(&net.store, rng).0);
    }
    let zs: Vec<T> = zs.concat();
    let rs: Vec<T> = rs.concat();
    let a = JointBatch::new(&zs, &rs, rows.len())?;
    let b = JointBatch::new(&zp, &rp, rows.len())?;
    Ok(mmd2_joint(&a, &b, T::lit(net.config.mmd_c))?.to_f64_lossy())
}

/// Overrides applied at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Pipeline to run; defaults to the checkpoint's training mode.
    pub pipeline: Option<Mode>,
    pub snr_db: Option<f64>,
    pub bits: Option<u32>,
    pub domain: Domain,
    pub seed: u64,
    /// Rows used for the MMD column (`0` skips it).
    pub mmd_rows: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            pipeline: None,
            snr_db: None,
            bits: None,
            domain: Domain::Original,
            seed: 0,
            mmd_rows: 256,
        }
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub ratio: f64,
    #[serde(rename = "B")]
    pub bits: u32,
    #[serde(serialize_with = "crate::trainer::ser_f64")]
    pub snr_db: f64,
    #[serde(serialize_with = "crate::trainer::ser_f64")]
    pub nmse_db: f64,
    #[serde(serialize_with = "crate::trainer::ser_f64")]
    pub mmd: f64,
    pub params: usize,
    pub variant: String,
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "ratio,B,snr_db,nmse_db,mmd,params,variant";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.ratio,
                r.bits,
                fmt_f64(r.snr_db),
                fmt_f64(r.nmse_db),
                fmt_f64(r.mmd),
                r.params,
                r.variant
            ));
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Evaluates `net` on `rows` of `data` (all rows when empty).
pub fn evaluate<T: Scalar>(
    net: &InvCsiNet<T>,
    data: &Prepared<T>,
    rows: &[usize],
    opts: &EvalOptions,
) -> Result<EvalRecord> {
    if data.dims != net.dims {
        return shape(format!(
            "dataset geometry {:?} does not match the model's {:?}",
            data.dims, net.dims
        ));
    }
    let all: Vec<usize>;
    let rows = if rows.is_empty() {
        all = (0..data.len()).collect();
        &all
    } else {
        rows
    };
    let pipeline = opts.pipeline.unwrap_or(net.config.mode);
    let snr_db = opts.snr_db.unwrap_or(net.config.snr_db);
    let snr = crate::mathx::db_to_linear(snr_db);

    // a different bit width only makes sense for a quantizer that was never
    // trained, so it is rebuilt at its uniform initialization
    let rebuilt;
    let net = match opts.bits {
        Some(b) if b != net.daq.bits => {
            if net.config.mode == Mode::Practical {
                return Err(Error::Config(format!(
                    "checkpoint was trained with {} bits; cannot evaluate at {b}",
                    net.daq.bits
                )));
            }
            crate::config::check_bits(b)?;
            let mut cfg = net.config.clone();
            cfg.bits = b;
            let mut fresh = InvCsiNet::<T>::new(&cfg, net.dims)?;
            // construction order is identical, so ids line up; only the
            // quantizer tensors change shape
            for id in net.store.ids() {
                if fresh.store.tensor(id).shape() == net.store.tensor(id).shape() {
                    fresh.store.set(id, net.store.get(id))?;
                }
            }
            fresh.stats = net.stats;
            rebuilt = fresh;
            &rebuilt
        }
        _ => net,
    };

    let mut rng = stream_rng(opts.seed, STREAM_METRIC);
    let nmse_db = nmse_db_of(net, data, rows, pipeline, snr, opts.domain, &mut rng)?;
    let mmd = if opts.mmd_rows >= 2 {
        let mut probe = net.clone();
        probe.config.mode = pipeline;
        held_out_mmd(&probe, data, &rows[..rows.len().min(opts.mmd_rows)], snr, &mut rng)?
    } else {
        f64::NAN
    };
    Ok(EvalRecord {
        ratio: net.ratio(),
        bits: net.daq.bits,
        snr_db,
        nmse_db,
        mmd,
        params: count_params(net).total,
        variant: net.config.variant.as_str().to_string(),
    })
}

/// Evaluates each variant's own checkpoint over an `(snr_db, rows)` grid.
/// Every variant in `variants` must be present in `family`.
pub fn ablate<T: Scalar>(
    family: &BTreeMap<Variant, InvCsiNet<T>>,
    variants: &[Variant],
    data: &Prepared<T>,
    rows: &[usize],
    snr_grid_db: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &v in variants {
        let net = family
            .get(&v)
            .ok_or_else(|| Error::Config(format!("missing checkpoint for variant {}", v.as_str())))?;
        for &snr_db in snr_grid_db {
            let o = EvalOptions {
                snr_db: Some(snr_db),
                pipeline: Some(Mode::Practical),
                ..*opts
            };
            report.records.push(evaluate(net, data, rows, &o)?);
        }
    }
    Ok(report)
}

/// Trainable-parameter counts by component. Shared tensors are counted
/// once; the decoder reuses the encoder's entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub inn: usize,
    pub daq: usize,
    pub lan: usize,
    pub prior: usize,
    pub decoder_exclusive: usize,
    pub total: usize,
}

impl ParamCount {
    /// Encoder side only: the shared network.
    pub fn encoder(&self) -> usize {
        self.inn
    }
}

/// Counts the parameters the pipeline actually uses: the quantizer and the
/// compensation stage only exist in the practical mode, and the no-ic
/// variant has neither the alignment network nor a learned prior.
pub fn count_params<T: Scalar>(net: &InvCsiNet<T>) -> ParamCount {
    let s = &net.store;
    let practical = net.config.mode == Mode::Practical;
    let inn = s.count(net.encoder_params());
    let daq = if practical { s.count(net.daq.params()) } else { 0 };
    let lan = if net.uses_lan() { s.count(net.lan.params()) } else { 0 };
    let prior = if practical && net.config.variant != Variant::NoIc {
        s.count(net.prior.params())
    } else {
        0
    };
    let decoder_exclusive = s.count(net.decoder_exclusive_params());
    ParamCount {
        inn,
        daq,
        lan,
        prior,
        decoder_exclusive,
        total: inn + daq + lan + prior + decoder_exclusive,
    }
}

//! Bidirectional training loop, metric log and checkpoints.

mod checkpoint;
mod step;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointFile, RngState,
};
pub use step::{batch_pass, BatchOutcome, LossTerms};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chansim::CsiSample;
use crate::config::{Mode, Objective, TrainConfig};
use crate::dbcd::Tpm;
use crate::diff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::eval::{held_out_mmd, nmse_db_of, Domain};
use crate::model::{split_rows, stream_rng, InvCsiNet, Prepared, STREAM_METRIC, STREAM_TRAIN};
use crate::tensor::Scalar;

/// One metrics-log record. Non-finite values serialize as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    #[serde(serialize_with = "ser_f64")]
    pub loss_total: f64,
    #[serde(rename = "loss_H", serialize_with = "ser_f64")]
    pub loss_h: f64,
    #[serde(serialize_with = "ser_f64")]
    pub loss_r: f64,
    #[serde(serialize_with = "ser_f64")]
    pub nmse_db: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mmd: f64,
}

pub(crate) fn ser_f64<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

impl EpochMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Owns the model, optimizer state and training rng.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub net: InvCsiNet<T>,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    tpm: Option<Tpm>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: InvCsiNet<T>) -> Result<Self> {
        let adam = Adam::new(&net.store, AdamConfig::default());
        let rng = stream_rng(net.config.seed, STREAM_TRAIN);
        Self::assemble(net, adam, 0, rng)
    }

    pub(crate) fn assemble(net: InvCsiNet<T>, adam: Adam<T>, epoch: usize, rng: ChaCha8Rng) -> Result<Self> {
        let tpm = match net.config.mode {
            Mode::Practical => Some(net.tpm(net.config.snr_linear())?),
            Mode::Ideal => None,
        };
        Ok(Self {
            net,
            adam,
            epoch,
            rng,
            tpm,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self> {
        let rng = ckpt.rng.restore();
        Self::assemble(ckpt.net, ckpt.adam, ckpt.epoch, rng)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            net: self.net.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            rng: RngState::capture(&self.rng),
        }
    }

    fn terms(&self) -> [Option<LossTerms>; 2] {
        let kappa = self.net.config.kappa;
        let both = match self.net.config.objective {
            Objective::Combined => LossTerms { recon: 1.0, forward: kappa },
            Objective::ReconOnly => LossTerms { recon: 1.0, forward: 0.0 },
            Objective::MmdOnly => LossTerms { recon: 0.0, forward: 1.0 },
        };
        if self.net.config.alternate && both.recon != 0.0 && both.forward != 0.0 {
            [
                Some(LossTerms { recon: 0.0, forward: both.forward }),
                Some(LossTerms { recon: both.recon, forward: 0.0 }),
            ]
        } else {
            [Some(both), None]
        }
    }

    /// One pass over `rows` of `data` in a freshly shuffled order. Returns
    /// mean `(L_H, L_r)` over batches.
    pub fn run_epoch(&mut self, data: &Prepared<T>, rows: &[usize]) -> Result<(f64, f64)> {
        let lr = self.net.config.lr_at(self.epoch);
        let batch = self.net.config.batch;
        let mut order = rows.to_vec();
        order.shuffle(&mut self.rng);
        let (mut sum_h, mut sum_r, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            // a trailing single row cannot form an MMD batch
            if chunk.len() < 2 {
                continue;
            }
            let xs: Vec<&[T]> = chunk.iter().map(|&i| data.x[i].as_slice()).collect();
            let mut first = true;
            for terms in self.terms().into_iter().flatten() {
                let out = batch_pass(&self.net, self.tpm.as_ref(), &xs, terms, &mut self.rng)?;
                if first {
                    sum_h += out.loss_h;
                    sum_r += out.loss_r;
                    first = false;
                }
                self.net.store.zero_grad();
                self.net.store.accumulate(&out.grads);
                self.adam.step(&mut self.net.store, lr)?;
            }
            batches += 1;
        }
        self.epoch += 1;
        let n = batches.max(1) as f64;
        Ok((sum_h / n, sum_r / n))
    }

    /// Held-out `(NMSE dB, MMD²)` through the inference pipeline with a
    /// fixed metric seed.
    pub fn metrics(&self, data: &Prepared<T>, held: &[usize]) -> Result<(f64, f64)> {
        let cfg = &self.net.config;
        let mut rng = stream_rng(cfg.seed, STREAM_METRIC);
        let nmse = nmse_db_of(&self.net, data, held, cfg.mode, cfg.snr_linear(), Domain::Original, &mut rng)?;
        let rows = &held[..held.len().min(cfg.metric_rows)];
        let mmd = held_out_mmd(&self.net, data, rows, cfg.snr_linear(), &mut rng)?;
        Ok((nmse, mmd))
    }
}

/// Result of [`train`]: the final (or last finite) model state, the
/// per-epoch log, and the divergence error if training aborted.
#[derive(Debug)]
pub struct TrainRun<T> {
    pub trainer: Trainer<T>,
    pub data: Prepared<T>,
    pub train_rows: Vec<usize>,
    pub held_rows: Vec<usize>,
    pub metrics: Vec<EpochMetrics>,
    pub diverged: Option<Error>,
}

impl<T: Scalar> TrainRun<T> {
    pub fn metrics_jsonl(&self) -> String {
        self.metrics.iter().map(|m| m.to_json() + "\n").collect()
    }
}

/// Trains from scratch on `samples` (70/30 split by default, statistics fit
/// on the training rows). `on_epoch` sees every logged record.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    samples: &[CsiSample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainRun<T>> {
    config.validate()?;
    if samples.len() < 4 {
        return Err(Error::Config(format!("need at least 4 samples to train, got {}", samples.len())));
    }
    let (train_rows, held_rows) = split_rows(samples.len(), config.train_fraction, config.seed);
    let data = Prepared::<T>::new(samples, None, Some(&train_rows))?;
    let mut net = InvCsiNet::<T>::new(config, data.dims)?;
    net.stats = data.stats;
    let mut trainer = Trainer::new(net)?;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut diverged = None;
    while trainer.epoch < config.epochs {
        let snapshot = trainer.clone();
        let lr = config.lr_at(trainer.epoch);
        let outcome = trainer
            .run_epoch(&data, &train_rows)
            .and_then(|(h, r)| {
                trainer.net.store.check_finite()?;
                let (nmse, mmd) = trainer.metrics(&data, &held_rows)?;
                Ok((h, r, nmse, mmd))
            });
        let failure = match outcome {
            Ok((h, r, nmse, mmd)) => {
                let total = match config.objective {
                    Objective::Combined => h + config.kappa * r,
                    Objective::ReconOnly => h,
                    Objective::MmdOnly => r,
                };
                if total.is_finite() && !nmse.is_nan() && nmse != f64::INFINITY && mmd.is_finite() {
                    let rec = EpochMetrics {
                        epoch: trainer.epoch,
                        lr,
                        loss_total: total,
                        loss_h: h,
                        loss_r: r,
                        nmse_db: nmse,
                        mmd,
                    };
                    on_epoch(&rec);
                    metrics.push(rec);
                    None
                } else {
                    Some(format!("loss became non-finite (total {total}, NMSE {nmse})"))
                }
            }
            Err(e) => Some(e.to_string()),
        };
        if let Some(reason) = failure {
            diverged = Some(Error::Divergence {
                epoch: snapshot.epoch + 1,
                reason,
            });
            trainer = snapshot;
            break;
        }
    }
    Ok(TrainRun {
        trainer,
        data,
        train_rows,
        held_rows,
        metrics,
        diverged,
    })
}

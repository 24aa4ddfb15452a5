//! The assembled codec: encoder/decoder network, quantizer, alignment
//! network and auxiliary prior sharing one parameter store, plus dataset
//! preparation and the inference path.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chansim::{complex_from_real, dft_angular, idft_angular, real_from_complex, CsiDims, CsiSample, DatasetStats, Segmenter};
use crate::config::{Mode, TrainConfig, Variant};
use crate::daq::{Daq, QuantizerParams};
use crate::dbcd::{tpm_bpsk_awgn, transmit_bits, Tpm};
use crate::diff::{ParamId, ParamStore};
use crate::error::{shape, Result};
use crate::icm::{AuxPrior, Lan};
use crate::inn::{InnConfig, InnModel};
use crate::tensor::Scalar;

/// ChaCha stream used to initialize parameters.
pub(crate) const STREAM_INIT: u64 = 0;
/// ChaCha stream for the train/held-out split.
pub(crate) const STREAM_SPLIT: u64 = 1;
/// ChaCha stream driving batch order and all training-time noise.
pub(crate) const STREAM_TRAIN: u64 = 2;
/// ChaCha stream for metric evaluation (reseeded every epoch).
pub(crate) const STREAM_METRIC: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct InvCsiNet<T> {
    pub config: TrainConfig,
    pub dims: CsiDims,
    pub store: ParamStore<T>,
    pub inn: InnModel,
    pub daq: Daq,
    pub lan: Lan,
    pub prior: AuxPrior,
    pub stats: DatasetStats,
}

impl<T: Scalar> InvCsiNet<T> {
    /// Builds a freshly initialized model; training freezes parameters the
    /// mode/variant does not learn.
    pub fn new(config: &TrainConfig, dims: CsiDims) -> Result<Self> {
        config.validate()?;
        let segmenter = Segmenter::new(dims, config.patch, config.ratio_c)?;
        let mut rng = stream_rng(config.seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let inn_cfg = InnConfig {
            blocks: config.blocks,
            hidden: config.hidden,
            rho: config.rho,
            perm_seed: config.seed,
        };
        let inn = InnModel::new(&mut store, segmenter.clone(), &inn_cfg, &mut rng);
        let m = segmenter.latent_len();
        let bits = config.bits.clamp(1, 8);
        let range = (config.quant_range[0], config.quant_range[1]);
        let daq = Daq::init_uniform(&mut store, m, bits, range, config.temperature)?;
        let lan = Lan::new(&mut store, segmenter.split, segmenter.spatial(), config.lan_hidden, &mut rng);
        let prior = AuxPrior::new(&mut store, segmenter.aux_len());
        let mut net = Self {
            config: config.clone(),
            dims,
            store,
            inn,
            daq,
            lan,
            prior,
            stats: DatasetStats { mean: 0.0, std: 1.0 },
        };
        net.apply_freezing();
        Ok(net)
    }

    /// Marks parameters trainable according to mode and variant.
    pub fn apply_freezing(&mut self) {
        let practical = self.config.mode == Mode::Practical;
        let v = self.config.variant;
        let set = |store: &mut ParamStore<T>, ids: &[ParamId], on: bool| {
            for &id in ids {
                store.set_trainable(id, on);
            }
        };
        set(&mut self.store, &self.daq.params(), practical && v != Variant::NoDaq);
        set(&mut self.store, &self.lan.params(), practical && v != Variant::NoIc);
        set(&mut self.store, &self.prior.params(), practical && v != Variant::NoIc);
    }

    pub fn latent_len(&self) -> usize {
        self.inn.latent_len()
    }

    pub fn aux_len(&self) -> usize {
        self.inn.aux_len()
    }

    pub fn ratio(&self) -> f64 {
        self.inn.segmenter.ratio()
    }

    pub fn quantizer(&self) -> QuantizerParams<T> {
        self.daq.derive(&self.store)
    }

    pub fn tpm(&self, snr: f64) -> Result<Tpm> {
        tpm_bpsk_awgn(snr, self.daq.bits, self.config.coder)
    }

    /// Whether the alignment network runs (it is skipped outright for the
    /// no-ic variant and in ideal mode).
    pub fn uses_lan(&self) -> bool {
        self.config.mode == Mode::Practical && self.config.variant != Variant::NoIc
    }

    /// Encoder parameters; the decoder reads exactly the same entries.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.inn.params()
    }

    /// Parameters that exist only at the decoder side.
    pub fn decoder_exclusive_params(&self) -> Vec<ParamId> {
        Vec::new()
    }

    /// `H → (z, r)` for one normalized angular-domain sample.
    pub fn encode(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (z, r, _) = self.inn.forward(&self.store, x)?;
        Ok((z, r))
    }

    /// `(ẑ, r) → H`.
    pub fn decode(&self, z: &[T], r: &[T]) -> Result<Vec<T>> {
        Ok(self.inn.inverse(&self.store, z, r)?.0)
    }

    /// Inference path for one sample: hard quantization, real bit
    /// transmission, alignment, prior draw, inverse network. `pipeline`
    /// selects between the ideal (`z` passed through) and practical paths.
    pub fn reconstruct<R: Rng>(&self, x: &[T], pipeline: Mode, snr: f64, rng: &mut R) -> Result<Vec<T>> {
        let (z, _) = self.encode(x)?;
        let z_hat = match pipeline {
            Mode::Ideal => z,
            Mode::Practical => self.transmit(&z, snr, rng)?,
        };
        let (r, _) = self.prior.sample(&self.store, rng);
        self.decode(&z_hat, &r)
    }

    /// `z → ẑ` through the hard quantizer, the BPSK/AWGN bit channel and
    /// the alignment network.
    pub fn transmit<R: Rng>(&self, z: &[T], snr: f64, rng: &mut R) -> Result<Vec<T>> {
        let q = self.quantizer();
        let points = q.quant_points();
        let idx = q.hard_indices(z);
        let v_hat: Vec<T> = idx
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let j = transmit_bits(k, snr, self.daq.bits, self.config.coder, rng);
                points.column(d)[j]
            })
            .collect();
        if self.uses_lan() {
            Ok(self.lan.apply(&self.store, &v_hat)?.0)
        } else {
            Ok(v_hat)
        }
    }
}

/// Gaussian noise of variance `1/γ` (zero for an infinite SNR).
pub(crate) fn awgn<R: Rng>(snr: f64, rng: &mut R) -> f64 {
    if snr.is_infinite() {
        return 0.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    n / snr.sqrt()
}

/// Normalized angular-domain samples with their original complex channels.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub dims: CsiDims,
    pub stats: DatasetStats,
    /// Standardized `(2, N_r, N_t·N_c)` real stacks of the angular channel.
    pub x: Vec<Vec<T>>,
    pub h: Vec<Vec<Complex64>>,
}

/// Angular DFT and real stacking, before standardization.
pub fn angular_real(samples: &[CsiSample]) -> Result<(CsiDims, Vec<Vec<f64>>)> {
    let dims = match samples.first() {
        Some(s) => s.dims,
        None => return shape("dataset is empty"),
    };
    let x = samples
        .iter()
        .map(|s| {
            if s.dims != dims {
                return shape("dataset mixes channel geometries");
            }
            Ok(real_from_complex(&dft_angular(&s.to_c64(), dims)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dims, x))
}

impl<T: Scalar> Prepared<T> {
    /// Standardizes with `stats`, or fits them on `fit_rows` when `None`.
    pub fn new(samples: &[CsiSample], stats: Option<DatasetStats>, fit_rows: Option<&[usize]>) -> Result<Self> {
        let (dims, raw) = angular_real(samples)?;
        let stats = match stats {
            Some(s) => s,
            None => match fit_rows {
                Some(rows) => {
                    let subset: Vec<Vec<f64>> = rows.iter().map(|&i| raw[i].clone()).collect();
                    DatasetStats::fit(&subset)?
                }
                None => DatasetStats::fit(&raw)?,
            },
        };
        let x = raw
            .into_iter()
            .map(|mut v| {
                stats.apply(&mut v);
                v.into_iter().map(T::lit).collect()
            })
            .collect();
        let h = samples.iter().map(CsiSample::to_c64).collect();
        Ok(Self { dims, stats, x, h })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Original-domain complex channel from a normalized reconstruction.
    pub fn to_channel(&self, x_hat: &[T]) -> Result<Vec<Complex64>> {
        let mut v: Vec<f64> = x_hat.iter().map(|v| v.to_f64_lossy()).collect();
        self.stats.invert(&mut v);
        idft_angular(&complex_from_real(&v)?, self.dims)
    }

    /// Angular-domain complex channel from a normalized reconstruction.
    pub fn to_angular(&self, x_hat: &[T]) -> Result<Vec<Complex64>> {
        let mut v: Vec<f64> = x_hat.iter().map(|v| v.to_f64_lossy()).collect();
        self.stats.invert(&mut v);
        complex_from_real(&v)
    }
}

/// Shuffled `(train, held-out)` row indices.
pub fn split_rows(count: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rows: Vec<usize> = (0..count).collect();
    rows.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let mut n_train = (count as f64 * train_fraction).round() as usize;
    if count >= 2 {
        n_train = n_train.clamp(1, count - 1);
    }
    let held = rows.split_off(n_train.min(count));
    (rows, held)
}

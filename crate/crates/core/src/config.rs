//! Training/evaluation configuration, parsed from TOML with unknown keys
//! rejected.

use serde::{Deserialize, Serialize};

use crate::dbcd::BitCoder;
use crate::error::{invalid, Error, Result};
use crate::inn::RhoMode;
use crate::mathx::db_to_linear;

/// Which pipeline sits between encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `z` reaches the decoder untouched.
    #[default]
    Ideal,
    /// Quantizer, bit channel and compensation stage in the loop.
    Practical,
}

/// Ablation variant of the practical pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Quantizer frozen at its uniform initialization.
    NoDaq,
    /// Bit-channel model replaced by Gaussian noise on the quantized features.
    NoDbcd,
    /// Alignment network and learnable prior removed.
    NoIc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoDaq, Variant::NoDbcd, Variant::NoIc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDaq => "no-daq",
            Variant::NoDbcd => "no-dbcd",
            Variant::NoIc => "no-ic",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Which losses feed the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `L_H + κ·L_r`.
    #[default]
    Combined,
    /// `L_H` only.
    ReconOnly,
    /// `L_r` only.
    MmdOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub variant: Variant,
    pub objective: Objective,
    /// Separate optimizer updates for the two losses instead of one update
    /// on their summed gradients.
    pub alternate: bool,
    pub precision: Precision,

    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_every: usize,
    pub train_fraction: f64,

    pub kappa: f64,
    pub mmd_c: f64,

    pub bits: u32,
    pub snr_db: f64,
    pub coder: BitCoder,
    pub quant_range: [f64; 2],
    pub temperature: f64,
    pub beta: f64,
    pub tau: f64,

    pub patch: usize,
    pub ratio_c: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub lan_hidden: usize,
    pub rho: RhoMode,

    pub seed: u64,
    /// Held-out rows used for the per-epoch MMD metric.
    pub metric_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ideal,
            variant: Variant::Full,
            objective: Objective::Combined,
            alternate: false,
            precision: Precision::F32,
            epochs: 1000,
            batch: 128,
            lr: 1e-3,
            lr_decay: 0.9,
            lr_every: 20,
            train_fraction: 0.7,
            kappa: 0.1,
            mmd_c: 1000.0,
            bits: 2,
            snr_db: 10.0,
            coder: BitCoder::Natural,
            quant_range: [-2.0, 2.0],
            temperature: 10.0,
            beta: 0.1,
            tau: 0.5,
            patch: 4,
            ratio_c: 1,
            blocks: 3,
            hidden: 32,
            lan_hidden: 16,
            rho: RhoMode::Disabled,
            seed: 0,
            metric_rows: 256,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Linear SNR; `+∞ dB` maps to a noiseless channel.
    pub fn snr_linear(&self) -> f64 {
        db_to_linear(self.snr_db)
    }

    /// `lr · decay^⌊epoch / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| -> Result<()> { Err(Error::Config(m)) };
        if self.epochs == 0 || self.batch < 2 {
            return err(format!(
                "need epochs ≥ 1 and batch ≥ 2, got {} and {}",
                self.epochs, self.batch
            ));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_every == 0 {
            return err("learning-rate schedule must be positive with decay in (0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return err(format!("train fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.kappa > 0.0) {
            return err(format!("κ must be positive, got {}", self.kappa));
        }
        if !(self.mmd_c > 0.0) {
            return err(format!("kernel constant must be positive, got {}", self.mmd_c));
        }
        if !(self.temperature > 0.0 && self.beta > 0.0 && self.tau > 0.0) {
            return err("temperature, β and τ must be positive".into());
        }
        if self.patch == 0 || self.ratio_c == 0 || self.blocks == 0 || self.hidden == 0 || self.lan_hidden == 0 {
            return err("patch, split, block count and widths must be positive".into());
        }
        if self.metric_rows < 2 {
            return err("metric_rows must be at least 2".into());
        }
        if self.mode == Mode::Practical {
            if !(1..=8).contains(&self.bits) {
                return err(format!("bit width must lie in [1, 8], got {}", self.bits));
            }
            if self.snr_db.is_nan() {
                return err("SNR must be a number".into());
            }
            if !(self.quant_range[1] > self.quant_range[0]) {
                return err("quantizer range must be increasing".into());
            }
        } else if self.variant != Variant::Full {
            return err("ablation variants apply to the practical mode only".into());
        }
        Ok(())
    }
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if !(1..=8).contains(&bits) {
        return invalid(format!("bit width must lie in [1, 8], got {bits}"));
    }
    Ok(())
}

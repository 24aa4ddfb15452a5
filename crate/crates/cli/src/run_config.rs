use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use invcsi_core::chansim::ChannelGeometry;
use invcsi_core::config::TrainConfig;

use crate::{CliResult, Common, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

/// Everything a subcommand may read from `--config`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub geometry: ChannelGeometry,
    pub paths: Paths,
    /// Sample count for `gen-data`.
    pub count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            geometry: ChannelGeometry::default(),
            paths: Paths::default(),
            count: 2000,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))
    }

    /// Config file (if any) with command-line flags applied on top.
    pub fn resolve(c: &Common) -> CliResult<Self> {
        let mut rc = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        let seeded_by_file = c.config.is_some() && rc.train.seed != 0;
        let t = &mut rc.train;
        match c.seed {
            Some(s) => t.seed = s,
            None if !seeded_by_file => {
                t.seed = rand::random();
                eprintln!("seed: {} (entropy-derived)", t.seed);
            }
            None => {}
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(if let Some(v) = c.$flag { t.$field = v; })*};
        }
        set!(mode => mode, bits => bits, snr_db => snr_db, ratio_c => ratio_c, patch => patch,
             epochs => epochs, batch => batch, kappa => kappa, mmd_c => mmd_c, variant => variant);
        if c.data.is_some() {
            rc.paths.data = c.data.clone();
        }
        if let Some(p) = c.ckpt.first() {
            rc.paths.ckpt = Some(p.clone());
        }
        if c.out.is_some() {
            rc.paths.out = c.out.clone();
        }
        // training settings are validated by the commands that train; eval
        // and ablate take mode and variant from the checkpoint
        rc.geometry.validate()?;
        Ok(rc)
    }

    pub fn data_path(&self) -> CliResult<&Path> {
        self.paths.data.as_deref().ok_or_else(|| Failure::Config("--data is required".into()))
    }

    pub fn ckpt_path(&self) -> CliResult<&Path> {
        self.paths.ckpt.as_deref().ok_or_else(|| Failure::Config("--ckpt is required".into()))
    }

    pub fn out_path(&self) -> Option<&Path> {
        self.paths.out.as_deref()
    }
}

//! Python bindings: dataset generation, model loading and evaluation,
//! training, and the bit-channel and MMD primitives.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use invcsi_core::chansim::{generate_channels, read_dataset, write_dataset, ChannelGeometry, CsiSample};
use invcsi_core::config::{Mode, Precision, TrainConfig};
use invcsi_core::dbcd::{self, BitCoder};
use invcsi_core::eval::{count_params, evaluate, EvalOptions};
use invcsi_core::losses::{self, JointBatch};
use invcsi_core::mathx::db_to_linear;
use invcsi_core::model::{InvCsiNet, Prepared};
use invcsi_core::trainer::{self, write_checkpoint, CheckpointFile};
use invcsi_core::{selftest as core_selftest, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format(_) => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::CouplingOverflow { .. } | Error::Divergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        Error::Shape(_) | Error::InvalidArgument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
    }
}

fn parse_coder(name: &str) -> PyResult<BitCoder> {
    match name {
        "natural" => Ok(BitCoder::Natural),
        "gray" => Ok(BitCoder::Gray),
        _ => Err(PyValueError::new_err(format!("unknown bit coder '{name}'"))),
    }
}

fn parse_config(toml: Option<&str>) -> PyResult<TrainConfig> {
    let cfg = match toml {
        Some(t) => TrainConfig::from_toml(t).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// A list of synthetic or loaded channel samples.
#[pyclass(name = "Dataset", module = "invcsi")]
struct PyDataset {
    samples: Vec<CsiSample>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (count, seed, n_rx = 4, n_tx = 8, n_sc = 16))]
    fn generate(count: usize, seed: u64, n_rx: usize, n_tx: usize, n_sc: usize) -> PyResult<Self> {
        let geo = ChannelGeometry {
            n_rx,
            n_tx,
            n_sc,
            ..ChannelGeometry::default()
        };
        let samples = generate_channels(count, &geo, seed).map_err(py_err)?;
        Ok(Self { samples })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (_, samples) = read_dataset(path).map_err(py_err)?;
        Ok(Self { samples })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(path, &self.samples).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }

    /// `(n_rx, n_tx, n_sc)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let d = self.samples[0].dims;
        (d.n_rx, d.n_tx, d.n_sc)
    }

    /// Row-major `(n_rx, n_tx·n_sc)` complex entries of sample `i`.
    fn sample(&self, i: usize) -> PyResult<Vec<Complex64>> {
        self.samples
            .get(i)
            .map(CsiSample::to_c64)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {i} out of range")))
    }
}

/// A codec held at 64-bit precision.
#[pyclass(name = "Model", module = "invcsi")]
struct PyModel {
    net: InvCsiNet<f64>,
}

impl PyModel {
    fn from_file(file: CheckpointFile) -> PyResult<Self> {
        let net = file.into_checkpoint::<f64>().map_err(py_err)?.net;
        Ok(Self { net })
    }
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model; `config` is a TOML training config.
    #[new]
    #[pyo3(signature = (config = None, n_rx = 4, n_tx = 8, n_sc = 16))]
    fn new(config: Option<&str>, n_rx: usize, n_tx: usize, n_sc: usize) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let geo = ChannelGeometry {
            n_rx,
            n_tx,
            n_sc,
            ..ChannelGeometry::default()
        };
        let net = InvCsiNet::new(&cfg, geo.dims()).map_err(py_err)?;
        Ok(Self { net })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?);
        Self::from_file(CheckpointFile::read_from(&mut r).map_err(py_err)?)
    }

    #[getter]
    fn latent_len(&self) -> usize {
        self.net.latent_len()
    }

    #[getter]
    fn aux_len(&self) -> usize {
        self.net.aux_len()
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.net.ratio()
    }

    #[getter]
    fn config(&self) -> String {
        self.net.config.to_toml()
    }

    /// Normalized angular-domain sample to `(z, r)`.
    fn encode(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.net.encode(&x).map_err(py_err)
    }

    fn decode(&self, z: Vec<f64>, r: Vec<f64>) -> PyResult<Vec<f64>> {
        self.net.decode(&z, &r).map_err(py_err)
    }

    fn param_count<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = count_params(&self.net);
        let d = PyDict::new(py);
        d.set_item("inn", c.inn)?;
        d.set_item("daq", c.daq)?;
        d.set_item("lan", c.lan)?;
        d.set_item("prior", c.prior)?;
        d.set_item("decoder_exclusive", c.decoder_exclusive)?;
        d.set_item("total", c.total)?;
        Ok(d)
    }

    /// One report row over every sample of `dataset`, using the model's
    /// stored normalization.
    #[pyo3(signature = (dataset, snr_db = None, bits = None, mode = None, seed = 0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        snr_db: Option<f64>,
        bits: Option<u32>,
        mode: Option<&str>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let pipeline = match mode {
            None => None,
            Some("ideal") => Some(Mode::Ideal),
            Some("practical") => Some(Mode::Practical),
            Some(m) => return Err(PyValueError::new_err(format!("unknown mode '{m}'"))),
        };
        let data = Prepared::new(&dataset.samples, Some(self.net.stats), None).map_err(py_err)?;
        let opts = EvalOptions {
            pipeline,
            snr_db,
            bits,
            seed,
            ..EvalOptions::default()
        };
        let rec = evaluate(&self.net, &data, &[], &opts).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("ratio", rec.ratio)?;
        d.set_item("B", rec.bits)?;
        d.set_item("snr_db", rec.snr_db)?;
        d.set_item("nmse_db", rec.nmse_db)?;
        d.set_item("mmd", rec.mmd)?;
        d.set_item("params", rec.params)?;
        d.set_item("variant", rec.variant)?;
        Ok(d)
    }
}

/// Trains on `dataset` and returns the model with its per-epoch metrics as
/// JSON strings. Divergence raises `RuntimeError`.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn train(py: Python<'_>, dataset: &PyDataset, config: Option<&str>) -> PyResult<(PyModel, Vec<String>)> {
    let cfg = parse_config(config)?;
    let samples = &dataset.samples;
    let (bytes, lines) = py
        .detach(|| -> Result<(Vec<u8>, Vec<String>), Error> {
            let mut bytes = Vec::new();
            let lines = match cfg.precision {
                Precision::F32 => run_training::<f32>(&cfg, samples, &mut bytes)?,
                Precision::F64 => run_training::<f64>(&cfg, samples, &mut bytes)?,
            };
            Ok((bytes, lines))
        })
        .map_err(py_err)?;
    let file = CheckpointFile::read_from(&mut bytes.as_slice()).map_err(py_err)?;
    Ok((PyModel::from_file(file)?, lines))
}

fn run_training<T: invcsi_core::Scalar>(
    cfg: &TrainConfig,
    samples: &[CsiSample],
    out: &mut Vec<u8>,
) -> Result<Vec<String>, Error> {
    let run = trainer::train::<T>(cfg, samples, |_| {})?;
    if let Some(e) = run.diverged {
        return Err(e);
    }
    write_checkpoint(out, &run.trainer.checkpoint())?;
    Ok(run.metrics.iter().map(|m| m.to_json()).collect())
}

/// Transition matrix `P[i][j] = P(detect i | sent j)` for BPSK over AWGN.
#[pyfunction]
#[pyo3(signature = (snr_db, bits, coder = "natural"))]
fn tpm(snr_db: f64, bits: u32, coder: &str) -> PyResult<Vec<Vec<f64>>> {
    let t = dbcd::tpm_bpsk_awgn(db_to_linear(snr_db), bits, parse_coder(coder)?).map_err(py_err)?;
    let n = t.size();
    Ok((0..n).map(|i| (0..n).map(|j| t.at(i, j)).collect()).collect())
}

/// Sends `index` as `bits` BPSK symbols and returns the detected index.
#[pyfunction]
#[pyo3(signature = (index, snr_db, bits, seed, coder = "natural"))]
fn transmit_bits(index: usize, snr_db: f64, bits: u32, seed: u64, coder: &str) -> PyResult<usize> {
    if !(1..=8).contains(&bits) || index >= 1 << bits {
        return Err(PyValueError::new_err("index does not fit the bit width"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dbcd::transmit_bits(index, db_to_linear(snr_db), bits, parse_coder(coder)?, &mut rng))
}

#[pyfunction]
#[pyo3(signature = (x, y, c = losses::DEFAULT_KERNEL_C))]
fn imq_kernel(x: Vec<f64>, y: Vec<f64>, c: f64) -> PyResult<f64> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(losses::imq_kernel(&x, &y, c))
}

/// Joint-kernel MMD² between two batches of `batch` rows, each given as
/// flattened latent and auxiliary matrices.
#[pyfunction]
#[pyo3(signature = (a_z, a_r, b_z, b_r, batch, c = losses::DEFAULT_KERNEL_C))]
fn mmd2_joint(a_z: Vec<f64>, a_r: Vec<f64>, b_z: Vec<f64>, b_r: Vec<f64>, batch: usize, c: f64) -> PyResult<f64> {
    let a = JointBatch::new(&a_z, &a_r, batch).map_err(py_err)?;
    let b = JointBatch::new(&b_z, &b_r, batch).map_err(py_err)?;
    losses::mmd2_joint(&a, &b, c).map_err(py_err)
}

/// Runs the built-in invariant checks; returns `(passed, failed)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn selftest(py: Python<'_>, seed: u64) -> (usize, usize) {
    let report = py.detach(|| core_selftest::run(seed));
    (report.passed(), report.failed())
}

#[pymodule]
fn invcsi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(tpm, m)?)?;
    m.add_function(wrap_pyfunction!(transmit_bits, m)?)?;
    m.add_function(wrap_pyfunction!(imq_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(mmd2_joint, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}

//! `invcsi`: dataset generation, training, evaluation, ablation sweeps and
//! self-tests for the invertible CSI feedback pipeline.

mod run_config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use invcsi_core::chansim::{generate_channels, read_dataset, write_dataset, CsiSample};
use invcsi_core::config::{Mode, Objective, Precision, Variant};
use invcsi_core::config::TrainConfig;
use invcsi_core::eval::{ablate, evaluate, Domain, EvalOptions, EvalRecord, EvalReport};
use invcsi_core::model::{InvCsiNet, Prepared};
use invcsi_core::trainer::{save_checkpoint, train, CheckpointFile};
use invcsi_core::{selftest, DType, Error, Scalar};

use run_config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "invcsi", version, about = "Invertible CSI feedback simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path (repeat for `ablate`).
    #[arg(long)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=8))]
    bits: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    ratio_c: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    mmd_c: Option<f64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic CSID dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes a checkpoint and a JSON-lines metrics log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Metrics log path (defaults to the checkpoint path with `.jsonl`).
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        /// Separate optimizer updates for the two losses.
        #[arg(long)]
        alternate: bool,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Evaluate a checkpoint; prints or writes one report row.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Compare in the angular domain instead of after the inverse DFT.
        #[arg(long)]
        angular: bool,
    },
    /// Evaluate a family of variant checkpoints over an SNR grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr_grid: Vec<f64>,
    },
    /// Train and evaluate one model per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        bits_grid: Vec<u32>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        ratio_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Vec<Variant>,
    },
    /// Run the gradient, bijectivity and bit-channel invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "ideal" => Ok(Mode::Ideal),
        "practical" => Ok(Mode::Practical),
        _ => Err(format!("expected ideal or practical, got '{s}'")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "combined" => Ok(Objective::Combined),
        "recon-only" => Ok(Objective::ReconOnly),
        "mmd-only" => Ok(Objective::MmdOnly),
        _ => Err(format!("expected combined, recon-only or mmd-only, got '{s}'")),
    }
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got '{s}'")),
    }
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Numeric(String),
    Selftest(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Selftest(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
            Failure::Numeric(m) => write!(f, "numerical failure: {m}"),
            Failure::Selftest(n) => write!(f, "{n} self-test check(s) failed"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format(_) => Failure::Io(e.to_string()),
            Error::NonFinite { .. } | Error::CouplingOverflow { .. } | Error::Divergence { .. } => {
                Failure::Numeric(e.to_string())
            }
            Error::Config(m) => Failure::Config(m),
            Error::Shape(_) | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(t) = std::env::var("INVCSI_THREADS") {
        // training and evaluation run on one thread; the cap is always met
        if t.parse::<usize>().map_or(true, |n| n == 0) {
            eprintln!("error: INVCSI_THREADS must be a positive integer, got '{t}'");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData { common, count } => gen_data(&common, count),
        Command::Train {
            common,
            metrics,
            objective,
            alternate,
            precision,
        } => {
            let mut rc = RunConfig::resolve(&common)?;
            if let Some(o) = objective {
                rc.train.objective = o;
            }
            rc.train.alternate |= alternate;
            if let Some(p) = precision {
                rc.train.precision = p;
            }
            rc.train.validate()?;
            match rc.train.precision {
                Precision::F32 => train_cmd::<f32>(&rc, metrics),
                Precision::F64 => train_cmd::<f64>(&rc, metrics),
            }
        }
        Command::Eval { common, angular } => {
            let rc = RunConfig::resolve(&common)?;
            let file = open_checkpoint(rc.ckpt_path()?)?;
            match file.dtype() {
                DType::F32 => eval_cmd::<f32>(&rc, &common, file, angular),
                DType::F64 => eval_cmd::<f64>(&rc, &common, file, angular),
            }
        }
        Command::Ablate { common, snr_grid } => {
            let rc = RunConfig::resolve(&common)?;
            ablate_cmd(&rc, &common, &snr_grid)
        }
        Command::Sweep {
            common,
            bits_grid,
            snr_grid,
            ratio_grid,
            variants,
        } => {
            let rc = RunConfig::resolve(&common)?;
            rc.train.validate()?;
            sweep_cmd(&rc, &bits_grid, &snr_grid, &ratio_grid, &variants)
        }
        Command::Selftest { seed } => {
            let report = selftest::run(seed);
            for c in &report.checks {
                println!(
                    "{} {:<12} {:<24} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.detail
                );
            }
            println!("{} passed, {} failed", report.passed(), report.failed());
            match report.failed() {
                0 => Ok(()),
                n => Err(Failure::Selftest(n)),
            }
        }
    }
}

fn load_samples(path: &Path) -> CliResult<Vec<CsiSample>> {
    let (_, samples) = read_dataset(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(samples)
}

fn open_checkpoint(path: &Path) -> CliResult<CheckpointFile> {
    let mut r = io::BufReader::new(fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?);
    CheckpointFile::read_from(&mut r).map_err(|e| match e {
        Error::Config(m) => Failure::Config(m),
        Error::Shape(_) | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
        other => Failure::Io(format!("{}: {other}", path.display())),
    })
}

fn gen_data(common: &Common, count: Option<usize>) -> CliResult<()> {
    let rc = RunConfig::resolve(common)?;
    let count = count.unwrap_or(rc.count);
    let out = common
        .out
        .clone()
        .or_else(|| rc.paths.data.clone())
        .ok_or_else(|| Failure::Config("gen-data needs --out".into()))?;
    let samples = generate_channels(count, &rc.geometry, rc.train.seed)?;
    write_dataset(&out, &samples)?;
    eprintln!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn train_cmd<T: Scalar>(rc: &RunConfig, metrics: Option<PathBuf>) -> CliResult<()> {
    let data = rc.data_path()?;
    let samples = load_samples(data)?;
    let ckpt = rc.paths.ckpt.clone().unwrap_or_else(|| PathBuf::from("model.ivck"));
    let metrics = metrics
        .or_else(|| rc.paths.metrics.clone())
        .unwrap_or_else(|| ckpt.with_extension("jsonl"));
    let mut log = io::BufWriter::new(fs::File::create(&metrics)?);
    let stdout = io::stdout();
    let mut write_err = None;
    let run = train::<T>(&rc.train, &samples, |m| {
        let line = m.to_json();
        if let Err(e) = writeln!(log, "{line}").and_then(|_| writeln!(stdout.lock(), "{line}")) {
            write_err.get_or_insert(e);
        }
    })?;
    log.flush()?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&ckpt, &run.trainer.checkpoint())?;
    eprintln!("checkpoint: {}  metrics: {}", ckpt.display(), metrics.display());
    match run.diverged {
        Some(e) => Err(Failure::Numeric(format!("{e}; last good checkpoint saved"))),
        None => Ok(()),
    }
}

fn write_report(report: &EvalReport, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => {
            fs::write(p, report.to_csv())?;
            fs::write(p.with_extension("jsonl"), report.to_jsonl())?;
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn eval_cmd<T: Scalar>(rc: &RunConfig, common: &Common, file: CheckpointFile, angular: bool) -> CliResult<()> {
    let ckpt = file.into_checkpoint::<T>()?;
    let net = ckpt.net;
    let samples = load_samples(rc.data_path()?)?;
    let data = Prepared::<T>::new(&samples, Some(net.stats), None)?;
    let opts = EvalOptions {
        pipeline: common.mode,
        snr_db: common.snr_db,
        bits: common.bits,
        domain: if angular { Domain::Angular } else { Domain::Original },
        seed: rc.train.seed,
        ..EvalOptions::default()
    };
    let record = evaluate(&net, &data, &[], &opts)?;
    write_report(&EvalReport { records: vec![record] }, common.out.as_deref())
}

fn ablate_cmd(rc: &RunConfig, common: &Common, snr_grid: &[f64]) -> CliResult<()> {
    if common.ckpt.is_empty() {
        return Err(Failure::Config("ablate needs at least one --ckpt".into()));
    }
    let mut family = BTreeMap::new();
    for path in &common.ckpt {
        let net: InvCsiNet<f64> = open_checkpoint(path)?.into_checkpoint()?.net;
        let v = net.config.variant;
        if family.insert(v, net).is_some() {
            return Err(Failure::Config(format!("two checkpoints for variant {}", v.as_str())));
        }
    }
    let variants: Vec<Variant> = family.keys().copied().collect();
    let first = family.values().next().expect("non-empty family");
    let samples = load_samples(rc.data_path()?)?;
    let data = Prepared::<f64>::new(&samples, Some(first.stats), None)?;
    let grid: Vec<f64> = if snr_grid.is_empty() {
        vec![common.snr_db.unwrap_or(first.config.snr_db)]
    } else {
        snr_grid.to_vec()
    };
    let opts = EvalOptions {
        seed: rc.train.seed,
        ..EvalOptions::default()
    };
    let report = ablate(&family, &variants, &data, &[], &grid, &opts)?;
    write_report(&report, common.out.as_deref())
}

fn sweep_cmd(rc: &RunConfig, bits: &[u32], snrs: &[f64], ratios: &[usize], variants: &[Variant]) -> CliResult<()> {
    let samples = load_samples(rc.data_path()?)?;
    let bits = if bits.is_empty() { vec![rc.train.bits] } else { bits.to_vec() };
    let snrs = if snrs.is_empty() { vec![rc.train.snr_db] } else { snrs.to_vec() };
    let ratios = if ratios.is_empty() { vec![rc.train.ratio_c] } else { ratios.to_vec() };
    let variants = if variants.is_empty() { vec![rc.train.variant] } else { variants.to_vec() };
    let mut report = EvalReport::default();
    for &c in &ratios {
        for &b in &bits {
            for &s in &snrs {
                for &v in &variants {
                    let mut cfg = rc.train.clone();
                    cfg.ratio_c = c;
                    cfg.bits = b;
                    cfg.snr_db = s;
                    cfg.variant = v;
                    cfg.validate()?;
                    eprintln!("sweep: c={c} B={b} snr={s} dB variant={}", v.as_str());
                    let record = match cfg.precision {
                        Precision::F32 => sweep_point::<f32>(&cfg, &samples)?,
                        Precision::F64 => sweep_point::<f64>(&cfg, &samples)?,
                    };
                    report.records.push(record);
                }
            }
        }
    }
    write_report(&report, rc.out_path())
}

fn sweep_point<T: Scalar>(cfg: &TrainConfig, samples: &[CsiSample]) -> CliResult<EvalRecord> {
    let run = train::<T>(cfg, samples, |_| {})?;
    if let Some(e) = run.diverged {
        return Err(e.into());
    }
    let opts = EvalOptions {
        seed: cfg.seed,
        ..EvalOptions::default()
    };
    let record = evaluate(&run.trainer.net, &run.data, &run.held_rows, &opts)?;
    Ok(record)
}

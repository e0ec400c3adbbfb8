//! Command-line driver: data generation, training, evaluation and gram
//! diagnostics.

pub mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nsvm::data::{self, Dataset, SplitSpec};
use nsvm::kernels;
use nsvm::models::NsvmModel;
use nsvm::rng::RngState;
use nsvm::training;
use nsvm::NsvmError;
use rand::seq::index;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<NsvmError> for CliError {
    fn from(e: NsvmError) -> Self {
        let code = match e {
            NsvmError::NumericFailure { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "nsvm", version, about = "Neural support vector machines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset as CSV.
    Gen(GenArgs),
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Evaluate a model on a labeled CSV.
    Eval(EvalArgs),
    /// Gram-matrix diagnostics of a model's feature map on a data subsample.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    /// 20-dimensional ringnorm.
    Ringnorm,
    /// Two-dimensional linearly separable points.
    Separable,
    /// Two Gaussian classes of 28x28 images.
    Images,
    /// Two digit classes from IDX files.
    Mnist,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub kind: GenKind,
    /// Number of samples (ignored for IDX input).
    #[arg(long, default_value_t = 7400)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV. With `--test-out`, receives the training part.
    #[arg(long)]
    pub out: PathBuf,
    /// Hold out a test part and write it here.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Fraction of samples held out with `--test-out` (stratified).
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Standardize features with statistics fitted on the training part.
    #[arg(long)]
    pub standardize: bool,
    /// Gap around the separating line (separable).
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    /// Pixel noise standard deviation (images).
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// IDX image file (mnist).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file (mnist).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Digits mapped to labels -1 and +1 (mnist).
    #[arg(long, value_delimiter = ',', default_values_t = [0u8, 1u8])]
    pub digits: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Evaluate on this CSV after training and write `metrics.json`.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of samples drawn without replacement.
    #[arg(long, default_value_t = 100)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diagnostics JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn csv_bytes(d: &Dataset) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    data::write_csv(d, &mut buf)?;
    Ok(buf)
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    data::load_csv(path).map_err(|e| match e {
        NsvmError::Io(io) => io_error(path, io),
        other => CliError::usage(format!("{}: {other}", path.display())),
    })
}

fn load_model(path: &Path) -> Result<(NsvmModel, String), CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let model = NsvmModel::load(bytes.as_slice()).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((model, sha256_hex(&bytes)))
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    let all = match a.kind {
        GenKind::Mnist => {
            let (images, labels) = match (&a.images, &a.labels) {
                (Some(i), Some(l)) => (i, l),
                _ => return Err(CliError::usage("gen mnist needs --images and --labels")),
            };
            if a.digits.len() != 2 || a.digits[0] == a.digits[1] {
                return Err(CliError::usage("--digits takes two distinct digits"));
            }
            data::load_idx_images(images, labels, (a.digits[0], a.digits[1]))?
        }
        _ if a.n == 0 => return Err(CliError::usage("--n must be positive")),
        GenKind::Separable if !(0.0..1.0).contains(&a.margin) => {
            return Err(CliError::usage("--margin must lie in [0, 1)"))
        }
        GenKind::Images if !(a.noise >= 0.0 && a.noise.is_finite()) => {
            return Err(CliError::usage("--noise must be non-negative"))
        }
        GenKind::Ringnorm => data::gen_ringnorm(a.n, a.seed),
        GenKind::Separable => data::gen_separable_2d(a.n, a.margin, a.seed),
        GenKind::Images => data::gen_gaussian_images(a.n, 28, a.noise, a.seed),
    };
    let (train, test) = match &a.test_out {
        Some(_) => {
            let (train, test) = data::split(&all, SplitSpec::Fraction(a.test_fraction), true, a.seed)?;
            (train, Some(test))
        }
        None => (all, None),
    };
    let (train, test) = if a.standardize {
        let stats = data::standardize_fit(&train)?;
        let test = test.map(|t| data::standardize_apply(&stats, &t)).transpose()?;
        (data::standardize_apply(&stats, &train)?, test)
    } else {
        (train, test)
    };
    let bytes = csv_bytes(&train)?;
    write_file(&a.out, &bytes)?;
    println!("{}: {} rows, sha256 {}", a.out.display(), train.len(), sha256_hex(&bytes));
    if let (Some(path), Some(test)) = (&a.test_out, test) {
        let bytes = csv_bytes(&test)?;
        write_file(path, &bytes)?;
        println!("{}: {} rows, sha256 {}", path.display(), test.len(), sha256_hex(&bytes));
    }
    Ok(())
}

/// Accuracy and confusion counts plus the checksum of the evaluated model.
#[derive(Debug, Serialize)]
pub struct MetricsDoc {
    pub accuracy: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub m: usize,
    pub model_sha256: String,
}

fn evaluate(model: &NsvmModel, checksum: String, data: &Dataset) -> Result<MetricsDoc, CliError> {
    let compiled = model.compile()?;
    let expected = model.net.input_shape.iter().product::<usize>();
    if data.dim() != expected {
        return Err(CliError::usage(format!(
            "data has {} features, model expects {expected}",
            data.dim()
        )));
    }
    let m = compiled.evaluate(data)?;
    Ok(MetricsDoc {
        accuracy: m.accuracy,
        tp: m.tp,
        tn: m.tn,
        fp: m.fp,
        fn_: m.fn_,
        m: m.m,
        model_sha256: checksum,
    })
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let overrides = config::Overrides {
        seed: a.seed,
        steps: a.steps,
        lambda: a.lambda,
        learning_rate: a.learning_rate,
        train_data: a.train_data.clone(),
        out_dir: a.out_dir.clone(),
    };
    let cfg = config::load(&a.config, &overrides)?;
    let train = load_data(&cfg.data.train)?;
    let test = a.test_data.as_deref().map(load_data).transpose()?;
    let (model, report) = training::train(&train, &cfg.train)?;

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut model_bytes = Vec::new();
    model.save(&mut model_bytes)?;
    let checksum = sha256_hex(&model_bytes);
    write_file(&dir.join("model.json"), &model_bytes)?;
    let mut log = Vec::new();
    for rec in &report.log {
        serde_json::to_writer(&mut log, rec).map_err(|e| CliError::usage(e.to_string()))?;
        log.write_all(b"\n").expect("writing to memory");
    }
    write_file(&dir.join("steps.jsonl"), &log)?;
    write_file(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    println!(
        "trained {} steps in {:.1}s, {} nonzero coefficients, model sha256 {checksum}",
        cfg.train.steps,
        report.duration.as_secs_f64(),
        report.nonzero_alphas
    );
    if let Some(test) = test {
        let metrics = evaluate(&model, checksum, &test)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        println!("accuracy {:.4}", metrics.accuracy);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let (model, checksum) = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let metrics = evaluate(&model, checksum, &data)?;
    write_json(&a.out, &metrics)?;
    println!("accuracy {:.4}", metrics.accuracy);
    Ok(())
}

/// Gram-matrix summary of a feature map on a subsample.
#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub m: usize,
    pub entropy: f64,
    pub alignment: f64,
    pub distance_to_identity: f64,
    pub distance_to_ones: f64,
    pub model_sha256: String,
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    if a.subsample < 2 {
        return Err(CliError::usage("--subsample must be at least 2"));
    }
    let (model, checksum) = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    if a.subsample > data.len() {
        return Err(CliError::usage(format!(
            "--subsample {} exceeds the {} available samples",
            a.subsample,
            data.len()
        )));
    }
    let compiled = model.compile()?;
    let mut rng = RngState::new(a.seed);
    let mut picks = index::sample(&mut rng, data.len(), a.subsample).into_vec();
    picks.sort_unstable();
    let mut features = Vec::with_capacity(picks.len());
    for &i in &picks {
        features.push(compiled.features(&data.inputs[i])?);
    }
    let labels: Vec<f64> = picks.iter().map(|&i| data.labels[i]).collect();
    let gram = kernels::gram(model.kernel(), &features)?;
    let diag = Diagnostics {
        m: picks.len(),
        entropy: kernels::von_neumann_entropy(&gram)?,
        alignment: kernels::alignment(&gram, &labels)?,
        distance_to_identity: kernels::distance_to_identity(&gram),
        distance_to_ones: kernels::distance_to_ones(&gram),
        model_sha256: checksum,
    };
    write_json(&a.out, &diag)?;
    println!(
        "entropy {:.4}, alignment {:.4}, |G - I| {:.4}, |G - 11^T| {:.4}",
        diag.entropy, diag.alignment, diag.distance_to_identity, diag.distance_to_ones
    );
    Ok(())
}

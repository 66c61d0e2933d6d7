//! Command-line front end. Exit codes: 0 success, 1 validation or config
//! error, 2 I/O error, 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::capgen::{generate_dataset, Charset, DistortionSpec};
use crate::capnet::{
    build_model, emit_history, evaluate, load_model, save_model, AnyCapNet, Metrics, ModelConfig,
    OracleModel, Predictor, TrainConfig, Trainer,
};
use crate::datapipe::{load_dataset, save_dataset, Dataset, EncodedSet, Preprocess};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::par;
use crate::rng::Rng;
use crate::tensor::{Precision, Real};
use crate::vulnscan::{analyze, emit_report};

pub const DEFAULT_MODEL_FILE: &str = "capnet.model";
pub const DEFAULT_METRICS_FILE: &str = "metrics.json";

/// Optional file locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub history_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Everything a run needs, as read from a JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub count: Option<usize>,
    pub charset: Charset,
    pub distortion: DistortionSpec,
    pub preprocess: Preprocess,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.distortion.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "capnet", version, about = "Synthetic CAPTCHA generation, solving, and weakness analysis")]
pub struct Cli {
    /// Worker threads for data-parallel paths (0 = all cores). Results do
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled CAPTCHA dataset to disk
    Generate(GenerateArgs),
    /// Train a model and write it with its training history
    Train(TrainArgs),
    /// Score a model on a dataset
    Eval(EvalArgs),
    /// Write a vulnerability report for a model on a dataset
    Analyze(AnalyzeArgs),
    /// Verify every backward pass against finite differences
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, env = "CAPNET_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Directory for history.csv and the SVG plots
    #[arg(long)]
    pub history_out: Option<PathBuf>,
    #[arg(long, env = "CAPNET_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    #[arg(long, conflicts_with = "oracle")]
    pub model: Option<PathBuf>,
    /// Use a stub that answers with the true labels
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::Config(format!("--{name} is required (flag or config paths.{})", name.replace('-', "_"))))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_ref())?;
    let count = args
        .count
        .or(cfg.count)
        .ok_or_else(|| Error::Config("--count is required (flag or config count)".into()))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = required(args.out, &cfg.paths.out, "out")?;
    let samples = generate_dataset(count, &cfg.charset, &cfg.distortion, seed)?;
    let dataset = Dataset {
        charset: cfg.charset.clone(),
        seed: Some(seed),
        spec: Some(cfg.distortion),
        samples,
    };
    save_dataset(&dataset, &out)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn print_metrics(label: &str, m: &Metrics) {
    let pos: Vec<String> = m.per_position_accuracy.iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "{label}: char_accuracy {:.4}, full_accuracy {:.4}, per_position [{}], mean_loss {:.6}",
        m.char_accuracy,
        m.full_accuracy,
        pos.join(", "),
        m.mean_loss
    );
}

fn check_dims(cfg: &ModelConfig, data: &EncodedSet<impl Real>) -> Result<()> {
    if (cfg.image_width, cfg.image_height) != (data.width(), data.height()) {
        return Err(Error::Config(format!(
            "model expects {}x{} images, preprocessed data is {}x{}",
            cfg.image_width,
            cfg.image_height,
            data.width(),
            data.height()
        )));
    }
    Ok(())
}

fn check_charsets(model: &Charset, data: &Charset) -> Result<()> {
    if model != data {
        return Err(Error::Validation(format!(
            "charset mismatch: model uses {:?} (K={}), data uses {:?} (K={})",
            model.as_string(),
            model.len(),
            data.as_string(),
            data.len()
        )));
    }
    Ok(())
}

fn train_typed<T: Real>(
    cfg: &RunConfig,
    seed: u64,
    train: &Dataset,
    test: Option<&Dataset>,
    model_out: &Path,
    history_out: &Path,
    quiet: bool,
) -> Result<()> {
    let train_set = EncodedSet::<T>::from_dataset(train, &cfg.preprocess)?;
    let test_set = test.map(|t| EncodedSet::<T>::from_dataset(t, &cfg.preprocess)).transpose()?;
    check_dims(&cfg.model, &train_set)?;
    let rng = Rng::new(seed);
    let mut model = build_model::<T>(&cfg.model, &train.charset, &rng)?;
    let mut trainer = Trainer::new(cfg.train, &rng)?;
    let epochs = cfg.train.epochs;
    let started = Instant::now();
    let history = trainer.fit(&mut model, &train_set, test_set.as_ref(), |r| {
        if quiet {
            return;
        }
        let test = match (r.test_char_acc, r.test_full_acc) {
            (Some(c), Some(f)) => format!(", test char {c:.4} full {f:.4}"),
            _ => String::new(),
        };
        println!(
            "epoch {}/{epochs}: loss {:.6}, train char {:.4} full {:.4}{test} ({} ms)",
            r.epoch, r.train_loss, r.train_char_acc, r.train_full_acc, r.ms
        );
    })?;
    save_model(&model, model_out)?;
    emit_history(&history, history_out)?;
    print_metrics("train", &evaluate(&mut model, &train_set)?);
    if let Some(t) = &test_set {
        print_metrics("test", &evaluate(&mut model, t)?);
    }
    println!(
        "model written to {}, history to {} ({} epochs in {:.1} s)",
        model_out.display(),
        history_out.display(),
        history.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
        cfg.train.validate()?;
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let data = required(args.data, &cfg.paths.data, "data")?;
    let test_path = args.test_data.or_else(|| cfg.paths.test_data.clone());
    let model_out = args
        .model_out
        .or_else(|| cfg.paths.model_out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MODEL_FILE));
    let history_out = args
        .history_out
        .or_else(|| cfg.paths.history_out.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let train = load_dataset(&data)?;
    let test = test_path.map(load_dataset).transpose()?;
    if let Some(t) = &test {
        check_charsets(&train.charset, &t.charset)?;
    }
    match cfg.model.precision {
        Precision::F32 => train_typed::<f32>(&cfg, seed, &train, test.as_ref(), &model_out, &history_out, args.quiet),
        Precision::F64 => train_typed::<f64>(&cfg, seed, &train, test.as_ref(), &model_out, &history_out, args.quiet),
    }
}

enum Loaded {
    Model(AnyCapNet),
    Oracle,
}

fn load_source(source: &ModelSource, cfg: &RunConfig) -> Result<Loaded> {
    if source.oracle {
        return Ok(Loaded::Oracle);
    }
    let path = source
        .model
        .clone()
        .or_else(|| cfg.paths.model.clone())
        .ok_or_else(|| Error::Config("either --model or --oracle is required".into()))?;
    Ok(Loaded::Model(load_model(path)?))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(args.config.as_ref())?;
    let data = required(args.data, &cfg.paths.data, "data")?;
    let metrics_out = args
        .metrics_out
        .or_else(|| cfg.paths.metrics_out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_METRICS_FILE));
    let source = load_source(&args.source, &cfg)?;
    let dataset = load_dataset(&data)?;

    fn run<T: Real>(p: &mut dyn Predictor<T>, ds: &Dataset, pre: &Preprocess) -> Result<Metrics> {
        check_charsets(p.charset(), &ds.charset)?;
        evaluate(p, &EncodedSet::<T>::from_dataset(ds, pre)?)
    }
    let metrics = match source {
        Loaded::Oracle => run::<f32>(&mut OracleModel::new(dataset.charset.clone()), &dataset, &cfg.preprocess)?,
        Loaded::Model(AnyCapNet::F32(mut m)) => run(&mut m, &dataset, &cfg.preprocess)?,
        Loaded::Model(AnyCapNet::F64(mut m)) => run(&mut m, &dataset, &cfg.preprocess)?,
    };
    print_metrics("eval", &metrics);
    let mut json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    json.push('\n');
    fs::write(&metrics_out, json).map_err(|e| Error::io(&metrics_out, e))?;
    println!("metrics written to {}", metrics_out.display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let cfg = load_config(args.config.as_ref())?;
    let data = required(args.data, &cfg.paths.data, "data")?;
    let report_dir = args
        .report_dir
        .or_else(|| cfg.paths.report_dir.clone())
        .unwrap_or_else(|| PathBuf::from("report"));
    let source = load_source(&args.source, &cfg)?;
    let dataset = load_dataset(&data)?;
    let pre = &cfg.preprocess;
    let report = match source {
        Loaded::Oracle => analyze::<f32, _>(&mut OracleModel::new(dataset.charset.clone()), &dataset, pre)?,
        Loaded::Model(AnyCapNet::F32(mut m)) => analyze(&mut m, &dataset, pre)?,
        Loaded::Model(AnyCapNet::F64(mut m)) => analyze(&mut m, &dataset, pre)?,
    };
    emit_report(&report, &report_dir)?;
    println!(
        "analyzed {} samples: char_accuracy {:.4}, full_accuracy {:.4}, mean eta {:.4} (correct {}, incorrect {})",
        report.samples,
        report.char_accuracy,
        report.full_accuracy,
        report.mean_eta,
        report.mean_eta_correct.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.mean_eta_incorrect.map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    for p in report.top_confusable_pairs.iter().take(5) {
        println!("  {} read as {}: {}", p.truth, p.predicted, p.count);
    }
    println!("report written to {}", report_dir.display());
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    let started = Instant::now();
    let report = gradcheck::run_gradcheck()?;
    print!("{report}");
    println!(
        "max rel err {:.3e} (tolerance {:.0e}) in {:.2} s",
        report.max_rel_err(),
        gradcheck::TOLERANCE,
        started.elapsed().as_secs_f64()
    );
    if report.all_passed() {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "gradient check failed for: {}",
            report.failing().join(", ")
        )))
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    par::with_threads(threads, move || match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Gradcheck => cmd_gradcheck(),
    })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 1, "trian": {}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        fs::write(&path, r#"{"seed": 1, "train": {"epochz": 3}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn config_revalidates_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"distortion": {"pepper_density": 1.5}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        fs::write(&path, r#"{"charset": "0123456789", "model": {"filters": [4, 4, 8, 8]}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.charset.len(), 10);
        assert_eq!(cfg.model.dense_width, 1664);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["capnet", "frobnicate"]), 1);
        assert_eq!(run(["capnet", "generate", "--count", "x"]), 1);
    }

    #[test]
    fn missing_required_path_is_config_error() {
        assert_eq!(run(["capnet", "train"]), 1);
        assert_eq!(run(["capnet", "eval", "--oracle"]), 1);
    }
}

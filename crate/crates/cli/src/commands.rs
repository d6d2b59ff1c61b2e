use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use mgpn::config::Config;
use mgpn::data::{gen_synthetic, Dataset, SyntheticSpec};
use mgpn::evaluation::{evaluate, param_breakdown, param_count, predict_sample, write_dump};
use mgpn::model::Model;
use mgpn::proposal::{build_grid, Scheme};
use mgpn::training::checkpoint::Checkpoint;
use mgpn::training::gradcheck::{
    grad_check, tiny_config, tiny_dataset, GRAD_CHECK_ENTRIES, GRAD_CHECK_EPSILON, GRAD_CHECK_TOLERANCE,
};
use mgpn::training::{epoch_line, PreparedBatch, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(mgpn::Error),
    #[error("{0}")]
    Verification(String),
}

impl From<mgpn::Error> for CliError {
    fn from(e: mgpn::Error) -> Self {
        match e {
            mgpn::Error::Config(msg) => CliError::Usage(format!("configuration error: {msg}")),
            other => CliError::Data(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mgpn", version, about = "Moment retrieval with a multi-granularity perception network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-span benchmark to disk.
    SynthData(SynthArgs),
    /// Train on `<data>/train.txt` and write checkpoints.
    Train(TrainArgs),
    /// Score a split, print the metric table and write the prediction dump.
    Eval(EvalArgs),
    /// Print the top spans for one sample.
    Predict(PredictArgs),
    /// Print the candidate validity mask.
    InspectMap(InspectArgs),
    /// Compare analytic and numeric gradients on a small model.
    GradCheck(GradCheckArgs),
    /// Print the parameter count with a per-module breakdown.
    ParamCount(ConfigArgs),
    /// Print the default configuration file.
    PrintDefaultConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, default_value_t = 16)]
    pub tv: usize,
    #[arg(long, default_value_t = 64)]
    pub dv: usize,
    #[arg(long, default_value_t = 32)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Samples held out into `test.txt`, taken from the end.
    #[arg(long, default_value_t = 0)]
    pub test_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Complete configuration file; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.C=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory holding `train.txt`, `vocab.txt`, `word_vectors.txt` and
    /// `features/`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Annotation file `<data>/<split>.txt` to score.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "predictions.txt")]
    pub dump: PathBuf,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, default_value_t = 16)]
    pub t: usize,
    #[arg(long, default_value = "sparse")]
    pub scheme: String,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Model section to check; the small certification model when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = GRAD_CHECK_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = GRAD_CHECK_ENTRIES)]
    pub entries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = GRAD_CHECK_TOLERANCE)]
    pub tolerance: f64,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::InspectMap(a) => inspect_map(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::ParamCount(a) => param_count_cmd(a),
        Command::PrintDefaultConfig => {
            print!("{}", Config::default().to_text());
            Ok(())
        }
    }
}

fn synth_data(a: SynthArgs) -> CliResult {
    let spec = SyntheticSpec {
        num_samples: a.samples as usize,
        t_v: a.tv,
        d_v: a.dv,
        vocab_size: a.vocab_size,
        noise_std: a.noise_std,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let ds = gen_synthetic(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.test_samples >= spec.num_samples {
        return Err(CliError::Usage(format!(
            "--test-samples {} leaves no training samples",
            a.test_samples
        )));
    }
    ds.write(&a.out, a.test_samples)?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        spec.num_samples,
        spec.num_samples - a.test_samples,
        a.test_samples,
        a.out.display()
    );
    Ok(())
}

fn load_config(a: &ConfigArgs) -> CliResult<Config> {
    let mut config = match &a.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for item in &a.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn load_split(dir: &Path, split: &str, config: &Config) -> CliResult<Dataset> {
    Ok(Dataset::load(
        &dir.join(format!("{split}.txt")),
        &dir.join("features"),
        &dir.join("vocab.txt"),
        &dir.join("word_vectors.txt"),
        config.model.word_dim,
        config.model.l_max,
        config.train.seed,
    )?)
}

fn train(a: TrainArgs) -> CliResult {
    let mut config = load_config(&a.config)?;
    let t = &mut config.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.checkpoint_dir {
        t.checkpoint_dir = v;
    }
    config.validate()?;
    let data = load_split(&a.data, "train", &config)?;
    let dir = config.train.checkpoint_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| mgpn::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let model = Model::new(&config.model, config.train.seed)?;
    let mut trainer = Trainer::new(model, config.train.clone())?;
    let mut log = String::new();
    let stdout = std::io::stdout();
    trainer.fit(&data, |epoch, loss| {
        let line = epoch_line(epoch, loss);
        let _ = writeln!(stdout.lock(), "{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    let log_path = dir.join("train.log");
    fs::write(&log_path, log).map_err(|e| mgpn::Error::Io {
        path: log_path,
        source: e,
    })?;
    let ck = Checkpoint::capture(&config, &trainer.model, Some(&trainer.adam), trainer.epoch)?;
    ck.save(&dir.join("final.mgpc"))?;
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let restored = Checkpoint::load(&a.checkpoint)?.restore()?;
    let mut config = restored.config;
    if let Some(v) = a.nms_threshold {
        config.eval.nms_threshold = v;
    }
    config.validate()?;
    let data = load_split(&a.data, &a.split, &config)?;
    let started = Instant::now();
    let ev = evaluate(&restored.model, &data, &config.eval)?;
    print!("{}", ev.table.to_text());
    fs::write(&a.dump, write_dump(&ev.samples)).map_err(|e| mgpn::Error::Io {
        path: a.dump.clone(),
        source: e,
    })?;
    let secs = started.elapsed().as_secs_f64();
    eprintln!(
        "scored {} samples in {secs:.2} s ({:.1} per second)",
        data.len(),
        data.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let restored = Checkpoint::load(&a.checkpoint)?.restore()?;
    let config = restored.config;
    let data = load_split(&a.data, &a.split, &config)?;
    if a.index >= data.len() {
        return Err(CliError::Usage(format!(
            "--index {} out of range, split has {} samples",
            a.index,
            data.len()
        )));
    }
    let preds = predict_sample(&restored.model, &data, a.index, a.k, config.eval.nms_threshold)?;
    let s = &data.samples[a.index];
    println!(
        "{} gt {:.6} {:.6}",
        s.video_id, s.gt_span.start, s.gt_span.end
    );
    for (k, p) in preds.iter().enumerate() {
        println!("{} {:.6} {:.6} {:.6}", k + 1, p.score, p.span.start, p.span.end);
    }
    Ok(())
}

fn inspect_map(a: InspectArgs) -> CliResult {
    let scheme: Scheme = a.scheme.parse()?;
    let grid = build_grid(a.t, 1.0, scheme).map_err(|e| CliError::Usage(e.to_string()))?;
    print!("{}", grid.render_mask());
    println!("N_A = {}", grid.num_valid());
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> CliResult {
    let model_config = match &a.config {
        Some(path) => Config::load(path)?.model,
        None => tiny_config(),
    };
    if a.entries == 0 || a.epsilon <= 0.0 || !a.epsilon.is_finite() {
        return Err(CliError::Usage("--entries and --epsilon must be positive".into()));
    }
    let model = Model::new(&model_config, a.seed)?;
    let data = tiny_dataset(&model_config, 2, a.seed)?;
    let samples: Vec<_> = data.samples.iter().collect();
    let batch = PreparedBatch::new(&model.net, &data, &samples)?;
    let r = grad_check(&model.net, &model.params, &batch, a.epsilon, a.entries, a.seed)?;
    println!("checked {} entries ({} with a narrowed step)", r.checked, r.narrowed);
    println!(
        "max relative error {:.3e} in {} (analytic {:.6e}, numeric {:.6e})",
        r.max_rel_error, r.worst_param, r.worst_analytic, r.worst_numeric
    );
    if r.max_rel_error > a.tolerance {
        return Err(CliError::Verification(format!(
            "max relative error {:.3e} exceeds tolerance {:.1e}",
            r.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn param_count_cmd(a: ConfigArgs) -> CliResult {
    let config = load_config(&a)?;
    config.validate()?;
    let model = Model::new(&config.model, config.train.seed)?;
    for (name, n) in param_breakdown(&model.params) {
        println!("{name:<24} {n:>10}");
    }
    println!("{:<24} {:>10}", "total", param_count(&model.params));
    Ok(())
}

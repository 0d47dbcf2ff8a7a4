//! Command-line surface: synthesis, training, evaluation, summarization.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{
    self, load_dataset, prepare_examples, random_features, vocab_corpus, DatasetMode, SyntheticConfig,
};
use crate::decoding::{summarize, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::evaluate_corpus;
use crate::model::{ClipSum, FrameFeatureSequence, ModelConfig, VisualInput};
use crate::scalar::{DType, Scalar};
use crate::tokenizer::Vocab;
use crate::training::trainer::LAST_CHECKPOINT as LAST;
use crate::training::{checkpoint_dtype, decode_all, BeamValidator, Checkpoint, Trainer};

#[derive(Debug, Parser)]
#[command(name = "clipsum", version, about = "Multimodal abstractive summarizer over step text and frame features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset, its feature files and the codebook manifest.
    GenerateSynthetic(GenerateArgs),
    /// Train a model and write checkpoints plus history.
    Train(TrainArgs),
    /// Decode a dataset and report ROUGE, BLEU and METEOR-lite.
    Evaluate(EvaluateArgs),
    /// Summarize one set of steps.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub codebook_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fusion_layer: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, conflicts_with = "random_visual")]
    pub text_only: bool,
    #[arg(long)]
    pub random_visual: bool,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    /// Config the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for hypotheses and the report; defaults to the checkpoint's.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Step descriptions, one per line.
    #[arg(long)]
    pub steps: String,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("CLIPSUM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateSynthetic(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Summarize(a) => cmd_summarize(&a),
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let corpus = data::generate(&SyntheticConfig {
        count: a.count,
        seed: a.seed,
        sigma: a.sigma,
        frames: a.frames,
        dim: a.dim,
        codebook_seed: a.codebook_seed,
    })?;
    let path = corpus.write(&a.out)?;
    println!("wrote {} records to {}", corpus.records.len(), path.display());
    Ok(())
}

/// Effective configuration: defaults, then the file, then `--set`, then flags.
pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(k) = a.fusion_layer {
        cfg.model.fusion_layer = k;
    }
    if let Some(m) = a.frames {
        cfg.model.n_frames = m;
    }
    if a.text_only && a.random_visual {
        return Err(Error::Config("--text-only and --random-visual are mutually exclusive".into()));
    }
    if a.text_only {
        cfg.model.visual_input = VisualInput::None;
    }
    if a.random_visual {
        cfg.model.visual_input = VisualInput::Random;
    }
    cfg.train.checkpoint_dir = a.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(a)?;
    let train = load_dataset(&a.train, DatasetMode::Training)?;
    let val = load_dataset(&a.val, DatasetMode::Training)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must be nonempty".into()));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let resume = a.resume && a.out.join(LAST).exists();
    let vocab = if resume {
        None
    } else {
        let v = Vocab::build(&vocab_corpus(&train), cfg.model.vocab_size)?;
        cfg.model.vocab_size = v.len();
        Some(v)
    };
    match cfg.train.dtype {
        DType::F32 => train_typed::<f32>(a, cfg, vocab, &train, &val),
        DType::F64 => train_typed::<f64>(a, cfg, vocab, &train, &val),
    }
}

fn train_typed<T: Scalar>(
    a: &TrainArgs,
    cfg: RunConfig,
    vocab: Option<Vocab>,
    train: &[data::DatasetRecord],
    val: &[data::DatasetRecord],
) -> Result<()> {
    let mut trainer = match vocab {
        Some(vocab) => {
            let model = ClipSum::<T>::new(cfg.model.clone(), cfg.train.seed)?;
            Trainer::new(model, cfg, vocab)?
        }
        None => {
            let ck = Checkpoint::<T>::load(&a.out.join(LAST))?;
            eprintln!("resuming at epoch {}", ck.state.epoch);
            let mut trainer = Trainer::resume(ck)?;
            let requested = ModelConfig {
                vocab_size: trainer.run.model.vocab_size,
                ..cfg.model.clone()
            };
            if trainer.run.model != requested {
                return Err(Error::Config(format!(
                    "model settings differ from the checkpoint in {}",
                    a.out.display()
                )));
            }
            trainer.run.train = cfg.train.clone();
            trainer
        }
    };
    let run = trainer.run.clone();
    fs::write(a.out.join("config.txt"), run.to_text()).map_err(|e| Error::io(&a.out, e))?;
    trainer.vocab.save(&a.out.join("vocab.txt"))?;
    let noise_seed = run.train.seed;
    let train_ex = prepare_examples::<T>(train, &trainer.vocab, &run.model, noise_seed)?;
    let val_ex = prepare_examples::<T>(val, &trainer.vocab, &run.model, noise_seed)?;
    let refs = val.iter().map(|r| r.summary.clone()).collect();
    let vocab = trainer.vocab.clone();
    let mut validator = BeamValidator::new(&val_ex, refs, &vocab, run.train.decode())?;
    let outcome = trainer.fit(&train_ex, &mut validator, None)?;
    for r in &outcome.history {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val rouge2 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.val_rouge2,
            if r.improved { "  *" } else { "" }
        );
    }
    let best = outcome
        .best_checkpoint
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "none".into());
    println!(
        "best epoch {} rouge2 {:.4} checkpoint {}",
        trainer.state.best_epoch.map_or("-".into(), |e| e.to_string()),
        trainer.state.best_rouge2.unwrap_or(0.0),
        best
    );
    Ok(())
}

#[derive(Serialize)]
struct HypothesisLine<'a> {
    id: &'a str,
    hypothesis: &'a str,
    reference: &'a str,
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    match checkpoint_dtype(&a.checkpoint)? {
        DType::F32 => evaluate_typed::<f32>(a),
        DType::F64 => evaluate_typed::<f64>(a),
    }
}

fn expected_model(path: &Option<PathBuf>) -> Result<Option<ModelConfig>> {
    path.as_ref().map(|p| RunConfig::load(p).map(|c| c.model)).transpose()
}

fn evaluate_typed<T: Scalar>(a: &EvaluateArgs) -> Result<()> {
    let expected = expected_model(&a.config)?;
    let (ck, model) = Checkpoint::<T>::load_model(&a.checkpoint, expected.as_ref())?;
    let records = load_dataset(&a.data, DatasetMode::Inference)?;
    if records.is_empty() {
        return Err(Error::Data(format!("dataset {} is empty", a.data.display())));
    }
    let examples = prepare_examples::<T>(&records, &ck.vocab, model.config(), ck.config.train.seed)?;
    let decode = DecodeConfig {
        beam: a.beam,
        max_len: a.max_len,
        ..ck.config.train.decode()
    };
    let hyps = decode_all(&model, &ck.vocab, &examples, &decode)?;
    let pairs: Vec<(&String, &String)> = hyps.iter().zip(records.iter().map(|r| &r.summary)).collect();
    let report = evaluate_corpus(&pairs)?;

    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut lines = String::new();
    for (r, h) in records.iter().zip(&hyps) {
        let line = HypothesisLine {
            id: &r.id,
            hypothesis: h,
            reference: &r.summary,
        };
        lines.push_str(&serde_json::to_string(&line).expect("serializable"));
        lines.push('\n');
    }
    let hp = out.join("hypotheses.jsonl");
    fs::write(&hp, lines).map_err(|e| Error::io(&hp, e))?;
    let rp = out.join("report.txt");
    fs::write(&rp, report.render()).map_err(|e| Error::io(&rp, e))?;
    let jp = out.join("metrics.json");
    fs::write(&jp, serde_json::to_string_pretty(&report).expect("serializable")).map_err(|e| Error::io(&jp, e))?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs) -> Result<()> {
    match checkpoint_dtype(&a.checkpoint)? {
        DType::F32 => summarize_typed::<f32>(a),
        DType::F64 => summarize_typed::<f64>(a),
    }
}

fn summarize_typed<T: Scalar>(a: &SummarizeArgs) -> Result<()> {
    let (ck, model) = Checkpoint::<T>::load_model(&a.checkpoint, None)?;
    let cfg = model.config().clone();
    let feats: Option<FrameFeatureSequence<f32>> = match cfg.visual_input {
        VisualInput::Features => {
            let path = a.features.as_ref().ok_or_else(|| {
                Error::Data("this checkpoint is multimodal; pass --features with a feature file".into())
            })?;
            let record = data::DatasetRecord {
                id: "cli".into(),
                steps: Vec::new(),
                features_path: path.clone(),
                summary: String::new(),
            };
            Some(data::load_record_features(&record, &cfg)?)
        }
        VisualInput::Random => Some(random_features("cli", ck.config.train.seed, cfg.n_frames, cfg.d_visual)),
        VisualInput::None => {
            if a.features.is_some() {
                eprintln!("warning: text-only checkpoint; ignoring --features");
            }
            None
        }
    };
    let source = step_source_text(&a.steps);
    let ex = data::build_example::<T>(&ck.vocab, &cfg, &source, "", feats)?;
    let decode = DecodeConfig {
        beam: a.beam,
        max_len: a.max_len,
        ..ck.config.train.decode()
    };
    let h = summarize(&model, ex.source.ids(), ex.features.as_ref(), &decode)?;
    println!("{}", ck.vocab.decode(&h.tokens)?);
    Ok(())
}

/// Joins nonempty lines the same way dataset steps are joined.
pub fn step_source_text(steps: &str) -> String {
    steps
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" . ")
}

//! Argument definitions and training-option resolution.
//!
//! Training options resolve in three layers: built-in defaults, then a
//! `key = value` config file, then explicit flags. Unknown file keys are
//! rejected so typos cannot silently fall back to defaults.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spancrf_core::corpus::ColumnSpec;
use spancrf_core::pipeline::TrainConfig;

#[derive(Parser)]
#[command(
    name = "spancrf",
    version,
    about = "Span-aware CRF sequence tagger with focal span scoring and self-training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Print corpus statistics: entity distribution and candidate-span shares.
    Stats {
        /// Labeled CoNLL file.
        #[arg(long)]
        input: PathBuf,
        /// Maximum candidate span width.
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Train a tagger and write a model container.
    Train {
        /// Labeled CoNLL file; repeat to concatenate several files.
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        /// Output path for the model container.
        #[arg(long)]
        out: PathBuf,
        /// Optional path for a structured per-epoch history.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Tag a CoNLL file with a trained model.
    Predict {
        /// Model container written by `train` or `selftrain`.
        #[arg(long)]
        model: PathBuf,
        /// CoNLL file to tag; existing labels are ignored.
        #[arg(long)]
        input: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Decode sentence-by-sentence on one thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
    },
    /// Two-stage self-training: train, weakly label, retrain on the union.
    Selftrain {
        /// Labeled CoNLL file; repeat to concatenate several files.
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        /// Unlabeled CoNLL file (label column read as placeholder).
        #[arg(long)]
        unlabeled: PathBuf,
        /// Output path for the stage-2 model container.
        #[arg(long)]
        out: PathBuf,
        /// Weakly labeled corpus path; `weak.conll` next to --out by default.
        #[arg(long)]
        weak_out: Option<PathBuf>,
        /// History path; `history.txt` next to --out by default.
        #[arg(long)]
        history_out: Option<PathBuf>,
        /// Optional path for the stage-1 model container.
        #[arg(long)]
        stage1_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Score predictions against gold labels (exact span match).
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Count classes absent from both corpora as zeros in the macro rows.
        #[arg(long)]
        macro_absent_zero: bool,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run every finite-difference gradient suite against a random model.
    Gradcheck {
        #[arg(long, default_value_t = 9202)]
        seed: u64,
        /// Maximum allowed relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Generate a deterministic synthetic NER corpus.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        /// Fraction of sentences that use an entity surface form as a plain word.
        #[arg(long, default_value_t = 0.05)]
        ambiguity: f64,
        /// Entity head forms per class.
        #[arg(long, default_value_t = 8)]
        lexicon_size: usize,
        /// Probability that an entity continues into a second token.
        #[arg(long, default_value_t = 0.4)]
        two_token_rate: f64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
    },
    /// Train three configurations and report their test F1 side by side:
    /// plain CRF, with the span objective, and with self-training on top.
    Ablate {
        /// Labeled CoNLL file; repeat to concatenate several files.
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        /// Unlabeled CoNLL file for the self-training row.
        #[arg(long)]
        unlabeled: PathBuf,
        /// Labeled CoNLL file scored by every row.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Columns::Plain)]
        columns: Columns,
        #[command(flatten)]
        opts: TrainOpts,
    },
}

#[derive(Copy, Clone, ValueEnum)]
pub enum Columns {
    /// Two columns: `token label`.
    Plain,
    /// Four columns: `token _ _ label`.
    Multiconer,
}

impl Columns {
    pub fn spec(self) -> ColumnSpec {
        match self {
            Columns::Plain => ColumnSpec::default(),
            Columns::Multiconer => ColumnSpec::multiconer(),
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
pub enum Format {
    /// Human-readable table.
    Text,
    /// `key=value` lines that round-trip exactly.
    Kv,
}

/// Training options shared by `train`, `selftrain`, and `ablate`. Every
/// field is optional here; unset fields fall back to the config file and
/// then to the built-in defaults.
#[derive(Args, Default)]
pub struct TrainOpts {
    /// `key = value` file supplying any training option; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// RNG seed for initialization, shuffling, and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Representation width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Context half-window; each word sees 2w+1 pooled neighbors.
    #[arg(long)]
    pub window: Option<usize>,
    /// Maximum span width the span head scores.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Fixed subword count per word for pooling.
    #[arg(long)]
    pub k_sub: Option<usize>,
    /// Maximum subword vocabulary size.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Span-loss weight; 0 disables the span objective.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Focal exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Focal class weights as `NEG,POS`, or `none` for inverse prevalence.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Enforce IOB2 transition legality at decode time.
    #[arg(long, value_name = "BOOL")]
    pub constrained_decode: Option<bool>,
    /// Keep weak sentences with at least this mean token log-probability,
    /// or `none` to keep all.
    #[arg(long)]
    pub confidence_threshold: Option<String>,
    /// Fraction of training sentences held out for per-epoch dev F1.
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Restore the best dev-F1 epoch instead of the last.
    #[arg(long, value_name = "BOOL")]
    pub select_best_dev: Option<bool>,
}

impl TrainOpts {
    /// Defaults, overlaid with the config file, overlaid with flags.
    pub fn resolve(&self) -> Result<TrainConfig, String> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("config file {}: {e}", path.display()))?;
            apply_config_file(&mut cfg, &text)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.dim {
            cfg.d = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.k_max {
            cfg.k_max = v;
        }
        if let Some(v) = self.k_sub {
            cfg.k_sub = v;
        }
        if let Some(v) = self.vocab_size {
            cfg.vocab_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = &self.alpha {
            cfg.alpha = parse_alpha(v)?;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.constrained_decode {
            cfg.constrained_decode = v;
        }
        if let Some(v) = &self.confidence_threshold {
            cfg.confidence_threshold = parse_optional_f64("confidence_threshold", v)?;
        }
        if let Some(v) = self.dev_fraction {
            cfg.dev_fraction = v;
        }
        if let Some(v) = self.select_best_dev {
            cfg.select_best_dev = v;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn parse_alpha(text: &str) -> Result<Option<(f64, f64)>, String> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (neg, pos) = text
        .split_once(',')
        .ok_or_else(|| format!("alpha must be `NEG,POS` or `none`, got `{text}`"))?;
    let neg: f64 = neg.trim().parse().map_err(|_| format!("alpha: bad number `{neg}`"))?;
    let pos: f64 = pos.trim().parse().map_err(|_| format!("alpha: bad number `{pos}`"))?;
    Ok(Some((neg, pos)))
}

fn parse_optional_f64(key: &str, text: &str) -> Result<Option<f64>, String> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    text.trim()
        .parse()
        .map(Some)
        .map_err(|_| format!("{key}: bad number `{text}`"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("config key {key}: bad value `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("config key {key}: expected true or false, got `{value}`")),
    }
}

/// Applies `key = value` lines. Blank lines and `#` comments are skipped;
/// keys mirror the flag names with underscores.
fn apply_config_file(cfg: &mut TrainConfig, text: &str) -> Result<(), String> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.seed = parse_num(key, value)?,
            "dim" => cfg.d = parse_num(key, value)?,
            "window" => cfg.window = parse_num(key, value)?,
            "k_max" => cfg.k_max = parse_num(key, value)?,
            "k_sub" => cfg.k_sub = parse_num(key, value)?,
            "vocab_size" => cfg.vocab_size = parse_num(key, value)?,
            "lambda" => cfg.lambda = parse_num(key, value)?,
            "gamma" => cfg.gamma = parse_num(key, value)?,
            "alpha" => cfg.alpha = parse_alpha(value)?,
            "lr" => cfg.lr = parse_num(key, value)?,
            "batch_size" => cfg.batch_size = parse_num(key, value)?,
            "epochs" => cfg.epochs = parse_num(key, value)?,
            "constrained_decode" => cfg.constrained_decode = parse_bool(key, value)?,
            "confidence_threshold" => {
                cfg.confidence_threshold = parse_optional_f64(key, value)?
            }
            "dev_fraction" => cfg.dev_fraction = parse_num(key, value)?,
            "select_best_dev" => cfg.select_best_dev = parse_bool(key, value)?,
            _ => return Err(format!("config line {}: unknown key `{key}`", lineno + 1)),
        }
    }
    Ok(())
}

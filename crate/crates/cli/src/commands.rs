//! Subcommand implementations. Every failure is classified for the exit
//! code: usage problems (1), data problems (2), numeric or check problems
//! (3), each reported as a single diagnostic line.

use std::fs;
use std::path::{Path, PathBuf};

use spancrf_core::checks::gradient_suite;
use spancrf_core::container::{load_model, save_model};
use spancrf_core::corpus::{corpus_stats, parse_conll, write_conll, Corpus};
use spancrf_core::error::Error as CoreError;
use spancrf_core::evaluator::{score, score_with, EvalReport, MacroMode};
use spancrf_core::pipeline::{
    init_model, init_model_without_span_head, predict, predict_sequential, self_train, train,
    Model, TrainConfig,
};
use spancrf_core::synth::{generate, SynthConfig};

use crate::opts::{Columns, Command, Format, TrainOpts};

pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) => m,
        }
    }
}

/// Input and model problems exit 2; everything else from the core is a
/// numeric or internal-check failure and exits 3.
fn from_core(err: CoreError) -> Failure {
    match err {
        CoreError::Parse { .. }
        | CoreError::InvalidTag { .. }
        | CoreError::InvalidIob(_)
        | CoreError::InvalidSpan(_)
        | CoreError::CorpusMismatch(_)
        | CoreError::Container(_)
        | CoreError::Config(_)
        | CoreError::Io(_) => Failure::Data(err.to_string()),
        other => Failure::Check(other.to_string()),
    }
}

fn read_corpus(path: &Path, columns: Columns) -> Result<Corpus, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    parse_conll(&text, columns.spec())
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// Reads and concatenates one corpus per path, in order.
fn read_corpora(paths: &[PathBuf], columns: Columns) -> Result<Corpus, Failure> {
    let mut sentences = Vec::new();
    for path in paths {
        sentences.extend(read_corpus(path, columns)?.sentences);
    }
    Corpus::from_sentences(sentences).map_err(from_core)
}

fn read_model(path: &Path) -> Result<Model, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    load_model(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    match out.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn classes_of(corpus: &Corpus) -> Vec<String> {
    corpus.label_classes.iter().cloned().collect()
}

fn resolve(opts: &TrainOpts) -> Result<TrainConfig, Failure> {
    opts.resolve().map_err(Failure::Usage)
}

fn eval_on(model: &Model, test: &Corpus) -> Result<EvalReport, Failure> {
    let pred = predict(model, test).map_err(from_core)?;
    score(test, &pred).map_err(from_core)
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Stats { input, k_max, columns, format } => {
            let corpus = read_corpus(&input, columns)?;
            let stats = corpus_stats(&corpus, k_max).map_err(from_core)?;
            match format {
                Format::Text => print!("{}", stats.render_text()),
                Format::Kv => print!("{}", stats.render_kv()),
            }
            Ok(())
        }

        Command::Train { train: train_paths, out, history, columns, opts } => {
            let cfg = resolve(&opts)?;
            let corpus = read_corpora(&train_paths, columns)?;
            let model = init_model(&classes_of(&corpus), &corpus, &cfg).map_err(from_core)?;
            let (trained, hist) = train(&model, &corpus, &cfg).map_err(from_core)?;
            print!("{}", hist.render_text());
            write_output(&out, &save_model(&trained))?;
            println!("wrote {}", out.display());
            if let Some(path) = history {
                write_output(&path, hist.render_kv().as_bytes())?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }

        Command::Predict { model, input, out, sequential, columns } => {
            let model = read_model(&model)?;
            let corpus = read_corpus(&input, columns)?;
            let tagged = if sequential {
                predict_sequential(&model, &corpus)
            } else {
                predict(&model, &corpus)
            }
            .map_err(from_core)?;
            let text = write_conll(&tagged, columns.spec());
            match out {
                Some(path) => {
                    write_output(&path, text.as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(())
        }

        Command::Selftrain {
            train: train_paths,
            unlabeled,
            out,
            weak_out,
            history_out,
            stage1_out,
            columns,
            opts,
        } => {
            let cfg = resolve(&opts)?;
            let labeled = read_corpora(&train_paths, columns)?;
            let unlabeled = read_corpus(&unlabeled, columns)?.stripped();
            let outcome = self_train(&labeled, &unlabeled, &cfg).map_err(from_core)?;

            println!("stage 1 ({} labeled sentences):", labeled.len());
            print!("{}", outcome.stage1_history.render_text());
            println!(
                "weakly labeled {} sentences ({} dropped below the confidence threshold)",
                outcome.weak.len(),
                outcome.dropped
            );
            println!(
                "stage 2 ({} labeled + {} weak sentences):",
                labeled.len(),
                outcome.weak.len()
            );
            print!("{}", outcome.stage2_history.render_text());

            let weak_path = weak_out.unwrap_or_else(|| sibling(&out, "weak.conll"));
            let history_path = history_out.unwrap_or_else(|| sibling(&out, "history.txt"));
            write_output(&out, &save_model(&outcome.stage2))?;
            println!("wrote {}", out.display());
            write_output(&weak_path, write_conll(&outcome.weak, columns.spec()).as_bytes())?;
            println!("wrote {}", weak_path.display());
            let mut history = String::new();
            history.push_str("[stage1]\n");
            history.push_str(&outcome.stage1_history.render_kv());
            history.push_str("[stage2]\n");
            history.push_str(&outcome.stage2_history.render_kv());
            history.push_str(&format!("dropped={}\n", outcome.dropped));
            write_output(&history_path, history.as_bytes())?;
            println!("wrote {}", history_path.display());
            if let Some(path) = stage1_out {
                write_output(&path, &save_model(&outcome.stage1))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }

        Command::Eval { gold, pred, macro_absent_zero, columns, format } => {
            let gold = read_corpus(&gold, columns)?;
            let pred = read_corpus(&pred, columns)?;
            let report = if macro_absent_zero {
                score_with(&gold, &pred, &[], MacroMode::AbsentCountsZero)
            } else {
                score(&gold, &pred)
            }
            .map_err(from_core)?;
            match format {
                Format::Text => print!("{}", report.render_text()),
                Format::Kv => print!("{}", report.render_kv()),
            }
            Ok(())
        }

        Command::Gradcheck { seed, tolerance } => {
            let results = gradient_suite(seed).map_err(from_core)?;
            for r in &results {
                println!("{:<26} {:.3e}", r.name, r.max_rel_err);
            }
            let worst = results
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .expect("suite is never empty");
            println!(
                "max rel error: {:.3e} at {} (tolerance {:.0e})",
                worst.max_rel_err, worst.name, tolerance
            );
            if worst.max_rel_err > tolerance {
                return Err(Failure::Check(format!(
                    "gradient check failed: {} at {:.3e} exceeds {:.0e}",
                    worst.name, worst.max_rel_err, tolerance
                )));
            }
            Ok(())
        }

        Command::Synth { seed, sentences, ambiguity, lexicon_size, two_token_rate, out, columns } => {
            let cfg = SynthConfig { seed, sentences, ambiguity, lexicon_size, two_token_rate };
            let corpus = generate(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
            let text = write_conll(&corpus, columns.spec());
            match out {
                Some(path) => {
                    write_output(&path, text.as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(())
        }

        Command::Ablate { train: train_paths, unlabeled, test, columns, opts } => {
            let cfg = resolve(&opts)?;
            if cfg.lambda <= 0.0 {
                return Err(Failure::Usage(
                    "ablate needs lambda > 0 so the span row differs from the baseline".into(),
                ));
            }
            let labeled = read_corpora(&train_paths, columns)?;
            let unlabeled = read_corpus(&unlabeled, columns)?.stripped();
            let test = read_corpus(&test, columns)?;
            let classes = classes_of(&labeled);

            let baseline_cfg = TrainConfig { lambda: 0.0, ..cfg.clone() };
            let model = init_model_without_span_head(&classes, &labeled, &baseline_cfg)
                .map_err(from_core)?;
            let (baseline, _) = train(&model, &labeled, &baseline_cfg).map_err(from_core)?;
            let f1_baseline = eval_on(&baseline, &test)?.micro.f1;

            let model = init_model(&classes, &labeled, &cfg).map_err(from_core)?;
            let (with_span, _) = train(&model, &labeled, &cfg).map_err(from_core)?;
            let f1_span = eval_on(&with_span, &test)?.micro.f1;

            let outcome = self_train(&labeled, &unlabeled, &cfg).map_err(from_core)?;
            let f1_selftrain = eval_on(&outcome.stage2, &test)?.micro.f1;

            println!("ablation (test micro entity F1, %)");
            println!("{:<16} {:>9} {:>9}", "configuration", "micro-F1", "delta");
            println!("{:<16} {:>9.2} {:>9}", "crf-baseline", 100.0 * f1_baseline, "-");
            for (name, f1) in [("+span", f1_span), ("+self-training", f1_selftrain)] {
                println!(
                    "{:<16} {:>9.2} {:>+9.2}",
                    name,
                    100.0 * f1,
                    100.0 * (f1 - f1_baseline)
                );
            }
            Ok(())
        }
    }
}

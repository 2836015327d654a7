//! CLI acceptance: the ablation-report shape criterion plus the documented
//! command examples, exit codes, and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn spancrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spancrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path, seed: &str, sentences: &str, name: &str) {
    let out = spancrf(dir, &["synth", "--seed", seed, "--sentences", sentences, "--out", name]);
    stdout_of(&out);
}

#[test]
fn criterion_7_ablation_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "41", "80", "train.conll");
    synth(dir.path(), "42", "40", "unlab.conll");
    synth(dir.path(), "43", "40", "test.conll");

    let out = spancrf(
        dir.path(),
        &[
            "ablate",
            "--train",
            "train.conll",
            "--unlabeled",
            "unlab.conll",
            "--test",
            "test.conll",
            "--epochs",
            "10",
            "--dev-fraction",
            "0",
        ],
    );
    let text = stdout_of(&out);
    let lines: Vec<&str> = text.lines().collect();

    // Shape: a title, a header, then exactly the three configuration rows
    // in baseline / +span / +self-training order, each with a parseable F1
    // and the non-baseline rows with a signed delta.
    let header = lines.iter().position(|l| l.starts_with("configuration")).expect("header row");
    assert!(lines[header].contains("micro-F1") && lines[header].contains("delta"));
    let rows: Vec<Vec<&str>> =
        lines[header + 1..header + 4].iter().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0][0], "crf-baseline");
    assert_eq!(rows[1][0], "+span");
    assert_eq!(rows[2][0], "+self-training");
    for row in &rows {
        let f1: f64 = row[1].parse().expect("F1 column parses");
        assert!((0.0..=100.0).contains(&f1));
    }
    assert_eq!(rows[0][2], "-");
    for row in &rows[1..] {
        assert!(row[2].starts_with('+') || row[2].starts_with('-'), "signed delta: {row:?}");
        let delta: f64 = row[2].parse().expect("delta column parses");
        assert!((-100.0..=100.0).contains(&delta));
    }

    println!(
        "criterion 7: PASS - ablate emits the three-row report \
         (crf-baseline / +span / +self-training with F1 and delta columns)"
    );
}

#[test]
fn eval_on_identical_files_prints_micro_100() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "5", "30", "g.conll");
    let out = spancrf(dir.path(), &["eval", "--gold", "g.conll", "--pred", "g.conll"]);
    let text = stdout_of(&out);
    let micro = text.lines().find(|l| l.starts_with("micro")).expect("micro row");
    let cols: Vec<&str> = micro.split_whitespace().collect();
    assert_eq!(&cols[1..4], &["100.00", "100.00", "100.00"], "{micro}");
}

#[test]
fn selftrain_writes_model_weak_corpus_and_history() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "6", "40", "d.conll");
    synth(dir.path(), "7", "20", "u.conll");
    let out = spancrf(
        dir.path(),
        &[
            "selftrain",
            "--train",
            "d.conll",
            "--unlabeled",
            "u.conll",
            "--out",
            "m.bin",
            "--epochs",
            "3",
            "--dev-fraction",
            "0",
        ],
    );
    stdout_of(&out);
    assert!(dir.path().join("m.bin").exists());
    assert!(dir.path().join("weak.conll").exists());
    let history = std::fs::read_to_string(dir.path().join("history.txt")).unwrap();
    assert!(history.contains("[stage1]") && history.contains("[stage2]"));
    assert!(history.contains("dropped="));

    // The weak corpus aligns token-for-token with the unlabeled input.
    let weak = std::fs::read_to_string(dir.path().join("weak.conll")).unwrap();
    let unlab = std::fs::read_to_string(dir.path().join("u.conll")).unwrap();
    let surfaces = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect()
    };
    assert_eq!(surfaces(&weak), surfaces(&unlab));
}

#[test]
fn gradcheck_passes_and_prints_max_rel_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spancrf(dir.path(), &["gradcheck"]);
    let text = stdout_of(&out);
    assert!(text.contains("max rel error:"), "{text}");
    assert!(text.contains("crf_nll_through_encoder"));
}

#[test]
fn exit_codes_distinguish_usage_data_and_check_failures() {
    let dir = tempfile::tempdir().unwrap();

    let usage = spancrf(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(1));

    let data = spancrf(dir.path(), &["stats", "--input", "missing.conll"]);
    assert_eq!(data.status.code(), Some(2));
    let diag = String::from_utf8(data.stderr).unwrap();
    assert_eq!(diag.lines().count(), 1, "one-line diagnostic, got: {diag}");
    assert!(diag.contains("missing.conll"));

    let check = spancrf(dir.path(), &["gradcheck", "--tolerance", "1e-20"]);
    assert_eq!(check.status.code(), Some(3));

    let help = spancrf(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn rerunning_a_pipeline_yields_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8", "40", "d.conll");
    let args = [
        "train",
        "--train",
        "d.conll",
        "--out",
        "m.bin",
        "--epochs",
        "4",
        "--seed",
        "123",
        "--dev-fraction",
        "0",
    ];
    stdout_of(&spancrf(dir.path(), &args));
    let first = std::fs::read(dir.path().join("m.bin")).unwrap();
    stdout_of(&spancrf(dir.path(), &args));
    let second = std::fs::read(dir.path().join("m.bin")).unwrap();
    assert_eq!(first, second);

    // Same synth command, same bytes.
    synth(dir.path(), "8", "40", "d2.conll");
    let a = std::fs::read(dir.path().join("d.conll")).unwrap();
    let b = std::fs::read(dir.path().join("d2.conll")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "9", "30", "d.conll");
    std::fs::write(dir.path().join("cfg.txt"), "epochs = 3\ndev_fraction = 0\n").unwrap();

    let from_file = spancrf(
        dir.path(),
        &["train", "--train", "d.conll", "--out", "a.bin", "--config", "cfg.txt", "--history", "h1.txt"],
    );
    stdout_of(&from_file);
    let h1 = std::fs::read_to_string(dir.path().join("h1.txt")).unwrap();
    assert_eq!(h1.lines().count(), 3, "{h1}");

    let flag_wins = spancrf(
        dir.path(),
        &[
            "train", "--train", "d.conll", "--out", "b.bin", "--config", "cfg.txt",
            "--epochs", "2", "--history", "h2.txt",
        ],
    );
    stdout_of(&flag_wins);
    let h2 = std::fs::read_to_string(dir.path().join("h2.txt")).unwrap();
    assert_eq!(h2.lines().count(), 2, "{h2}");

    let bad_key = spancrf(
        dir.path(),
        &["train", "--train", "d.conll", "--out", "c.bin", "--config", "missing-cfg.txt"],
    );
    assert_eq!(bad_key.status.code(), Some(1), "config file problems are usage errors");
}

#[test]
fn predict_reads_multiconer_columns() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "10", "30", "d.conll");
    stdout_of(&spancrf(
        dir.path(),
        &["train", "--train", "d.conll", "--out", "m.bin", "--epochs", "2", "--dev-fraction", "0"],
    ));

    // Re-shape the corpus into the four-column layout and round it through.
    let plain = std::fs::read_to_string(dir.path().join("d.conll")).unwrap();
    let four: String = plain
        .lines()
        .map(|l| {
            if l.trim().is_empty() || l.starts_with('#') {
                l.to_string()
            } else {
                let (tok, label) = l.split_once(char::is_whitespace).unwrap();
                format!("{tok} _ _ {}", label.trim())
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.path().join("d4.conll"), four + "\n").unwrap();

    let out = spancrf(
        dir.path(),
        &["predict", "--model", "m.bin", "--input", "d4.conll", "--columns", "multiconer"],
    );
    let text = stdout_of(&out);
    let first_row = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .unwrap();
    assert_eq!(first_row.split_whitespace().count(), 4, "{first_row}");
}

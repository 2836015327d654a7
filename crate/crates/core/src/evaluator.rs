//! Entity-level scoring: exact (start, end, class) matching with per-class
//! and aggregate precision/recall/F1.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::corpus::{spans_from_labels, Corpus};
use crate::error::{Error, Result};

/// How classes with zero gold and zero predicted entities enter the macro
/// average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroMode {
    /// Absent classes are left out of the average entirely.
    ExcludeAbsent,
    /// Absent classes contribute 0 to every averaged metric.
    AbsentCountsZero,
}

/// Precision/recall/F1 triple. All values in [0, 1]; rendering converts to
/// percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        Prf { precision, recall, f1: f1_of(precision, recall) }
    }
}

/// F1 = 2PR/(P+R), with 0 when P+R = 0.
pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub metrics: Prf,
    /// Gold entity count for the class.
    pub support: u64,
    /// Predicted entity count for the class.
    pub predicted: u64,
}

/// Evaluation report. Fields are public so externally sourced numbers can be
/// rendered through the same tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per class, sorted by class name.
    pub per_class: Vec<ClassMetrics>,
    pub micro: Prf,
    pub macro_avg: Prf,
}

/// Scores `pred` against `gold` with the default macro mode (absent classes
/// excluded) and the class universe observed in the two corpora.
pub fn score(gold: &Corpus, pred: &Corpus) -> Result<EvalReport> {
    score_with(gold, pred, &[], MacroMode::ExcludeAbsent)
}

/// Scores with extra classes forced into the report (useful when a model
/// knows classes that happen not to occur in either corpus) and an explicit
/// macro mode.
pub fn score_with(
    gold: &Corpus,
    pred: &Corpus,
    extra_classes: &[String],
    mode: MacroMode,
) -> Result<EvalReport> {
    if gold.sentences.len() != pred.sentences.len() {
        return Err(Error::CorpusMismatch(format!(
            "gold has {} sentences, predictions have {}",
            gold.sentences.len(),
            pred.sentences.len()
        )));
    }

    // (tp, fp, fn) per class.
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for class in gold
        .label_classes
        .iter()
        .chain(pred.label_classes.iter())
        .chain(extra_classes.iter())
    {
        counts.entry(class.clone()).or_insert((0, 0, 0));
    }

    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.rows.len() != p.rows.len() {
            return Err(Error::CorpusMismatch(format!(
                "sentence {} has {} gold tokens but {} predicted",
                i,
                g.rows.len(),
                p.rows.len()
            )));
        }
        for (gr, pr) in g.rows.iter().zip(&p.rows) {
            if gr.surface != pr.surface {
                return Err(Error::CorpusMismatch(format!(
                    "sentence {} surface mismatch: {:?} vs {:?}",
                    i, gr.surface, pr.surface
                )));
            }
        }

        let gold_spans: HashSet<(usize, usize, String)> = spans_from_labels(&g.labels())?
            .into_iter()
            .map(|s| (s.start, s.end, s.cls.expect("labeled span")))
            .collect();
        let pred_spans: HashSet<(usize, usize, String)> = spans_from_labels(&p.labels())?
            .into_iter()
            .map(|s| (s.start, s.end, s.cls.expect("labeled span")))
            .collect();

        for span in &gold_spans {
            let slot = counts.entry(span.2.clone()).or_insert((0, 0, 0));
            if pred_spans.contains(span) {
                slot.0 += 1;
            } else {
                slot.2 += 1;
            }
        }
        for span in &pred_spans {
            if !gold_spans.contains(span) {
                counts.entry(span.2.clone()).or_insert((0, 0, 0)).1 += 1;
            }
        }
    }

    Ok(report_from_counts(&counts, mode))
}

fn report_from_counts(counts: &BTreeMap<String, (u64, u64, u64)>, mode: MacroMode) -> EvalReport {
    let mut per_class = Vec::with_capacity(counts.len());
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    let mut macro_sums = (0.0, 0.0, 0.0);
    let mut macro_n = 0u64;

    for (class, &(tp, fp, fn_)) in counts {
        let metrics = Prf::from_counts(tp, fp, fn_);
        per_class.push(ClassMetrics {
            class: class.clone(),
            metrics,
            support: tp + fn_,
            predicted: tp + fp,
        });
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let absent = tp + fp + fn_ == 0;
        if !absent || mode == MacroMode::AbsentCountsZero {
            macro_sums.0 += metrics.precision;
            macro_sums.1 += metrics.recall;
            macro_sums.2 += metrics.f1;
            macro_n += 1;
        }
    }

    let macro_avg = if macro_n == 0 {
        Prf { precision: 0.0, recall: 0.0, f1: 0.0 }
    } else {
        Prf {
            precision: macro_sums.0 / macro_n as f64,
            recall: macro_sums.1 / macro_n as f64,
            f1: macro_sums.2 / macro_n as f64,
        }
    };

    EvalReport { per_class, micro: Prf::from_counts(tp_all, fp_all, fn_all), macro_avg }
}

impl EvalReport {
    /// Plain-text table: one row per class in sorted order, then micro and
    /// macro rows. Metrics are percentages.
    pub fn render_text(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|row| row.class.len())
            .chain(["class".len(), "micro".len(), "macro".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>8}\n",
            "class", "P", "R", "F1", "support"
        ));
        for row in &self.per_class {
            out.push_str(&format!(
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8}\n",
                row.class,
                100.0 * row.metrics.precision,
                100.0 * row.metrics.recall,
                100.0 * row.metrics.f1,
                row.support
            ));
        }
        for (name, prf) in [("micro", self.micro), ("macro", self.macro_avg)] {
            out.push_str(&format!(
                "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8}\n",
                name,
                100.0 * prf.precision,
                100.0 * prf.recall,
                100.0 * prf.f1,
                ""
            ));
        }
        out
    }

    /// Structured `key=value` rendering. Floats use the shortest exact
    /// representation, so `parse_kv(render_kv(r)) == r` bit for bit.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for row in &self.per_class {
            let c = &row.class;
            out.push_str(&format!("class.{c}.precision={}\n", row.metrics.precision));
            out.push_str(&format!("class.{c}.recall={}\n", row.metrics.recall));
            out.push_str(&format!("class.{c}.f1={}\n", row.metrics.f1));
            out.push_str(&format!("class.{c}.support={}\n", row.support));
            out.push_str(&format!("class.{c}.predicted={}\n", row.predicted));
        }
        for (name, prf) in [("micro", self.micro), ("macro", self.macro_avg)] {
            out.push_str(&format!("{name}.precision={}\n", prf.precision));
            out.push_str(&format!("{name}.recall={}\n", prf.recall));
            out.push_str(&format!("{name}.f1={}\n", prf.f1));
        }
        out
    }

    /// Parses the `render_kv` format back into a report.
    pub fn parse_kv(text: &str) -> Result<EvalReport> {
        fn bad(line: &str, why: &str) -> Error {
            Error::Parse { line: 0, msg: format!("{why}: {line:?}") }
        }
        let mut classes: Vec<String> = Vec::new();
        let mut fields: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut aggregates: BTreeMap<String, String> = BTreeMap::new();

        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| bad(line, "expected key=value"))?;
            if let Some(rest) = key.strip_prefix("class.") {
                let (class, field) =
                    rest.rsplit_once('.').ok_or_else(|| bad(line, "expected class.NAME.field"))?;
                if !classes.iter().any(|c| c == class) {
                    classes.push(class.to_string());
                }
                fields.insert((class.to_string(), field.to_string()), value.to_string());
            } else {
                aggregates.insert(key.to_string(), value.to_string());
            }
        }

        let float = |map: &BTreeMap<String, String>, key: &str| -> Result<f64> {
            map.get(key)
                .ok_or_else(|| bad(key, "missing key"))?
                .parse::<f64>()
                .map_err(|e| bad(key, &format!("bad float ({e})")))
        };

        let mut per_class = Vec::with_capacity(classes.len());
        for class in &classes {
            let get = |field: &str| -> Result<String> {
                fields
                    .get(&(class.clone(), field.to_string()))
                    .cloned()
                    .ok_or_else(|| bad(&format!("class.{class}.{field}"), "missing key"))
            };
            let parse_f = |field: &str| -> Result<f64> {
                get(field)?.parse::<f64>().map_err(|e| bad(field, &format!("bad float ({e})")))
            };
            let parse_u = |field: &str| -> Result<u64> {
                get(field)?.parse::<u64>().map_err(|e| bad(field, &format!("bad count ({e})")))
            };
            per_class.push(ClassMetrics {
                class: class.clone(),
                metrics: Prf {
                    precision: parse_f("precision")?,
                    recall: parse_f("recall")?,
                    f1: parse_f("f1")?,
                },
                support: parse_u("support")?,
                predicted: parse_u("predicted")?,
            });
        }

        Ok(EvalReport {
            per_class,
            micro: Prf {
                precision: float(&aggregates, "micro.precision")?,
                recall: float(&aggregates, "micro.recall")?,
                f1: float(&aggregates, "micro.f1")?,
            },
            macro_avg: Prf {
                precision: float(&aggregates, "macro.precision")?,
                recall: float(&aggregates, "macro.recall")?,
                f1: float(&aggregates, "macro.f1")?,
            },
        })
    }
}

/// Classes observed in either corpus, sorted.
pub fn observed_classes(gold: &Corpus, pred: &Corpus) -> Vec<String> {
    let mut set: BTreeSet<&String> = gold.label_classes.iter().collect();
    set.extend(pred.label_classes.iter());
    set.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, TokenRow};
    use crate::rng::{below, rng_from_seed};

    fn sentence(id: &str, labels: &[&str]) -> Sentence {
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, l)| TokenRow { surface: format!("w{i}"), label: l.to_string() })
            .collect();
        Sentence { id: id.to_string(), rows }
    }

    fn corpus(sentences: Vec<Sentence>) -> Corpus {
        Corpus::from_sentences(sentences).unwrap()
    }

    #[test]
    fn half_precision_full_recall() {
        let gold = corpus(vec![sentence("1", &["O", "B-PER", "I-PER", "O"])]);
        let pred = corpus(vec![sentence("1", &["O", "B-PER", "I-PER", "B-LOC"])]);
        let report = score(&gold, &pred).unwrap();
        assert_eq!(report.micro.precision, 0.5);
        assert_eq!(report.micro.recall, 1.0);
        assert!((report.micro.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_corpora_score_perfectly() {
        let gold = corpus(vec![
            sentence("1", &["B-PER", "O", "B-LOC", "I-LOC"]),
            sentence("2", &["O", "B-GRP", "O"]),
        ]);
        let report = score(&gold, &gold.clone()).unwrap();
        assert_eq!(report.micro, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(report.macro_avg, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        for row in &report.per_class {
            assert_eq!(row.metrics.f1, 1.0);
            assert!(row.support > 0);
            assert_eq!(row.support, row.predicted);
        }
    }

    #[test]
    fn wrong_class_on_right_boundary_is_both_fp_and_fn() {
        let gold = corpus(vec![sentence("1", &["O", "B-PER", "I-PER"])]);
        let pred = corpus(vec![sentence("1", &["O", "B-LOC", "I-LOC"])]);
        let report = score(&gold, &pred).unwrap();
        assert_eq!(report.micro.precision, 0.0);
        assert_eq!(report.micro.recall, 0.0);
        assert_eq!(report.micro.f1, 0.0);
        let per = &report.per_class;
        assert_eq!(per.len(), 2);
        assert_eq!(per[0].class, "LOC");
        assert_eq!(per[0].predicted, 1);
        assert_eq!(per[0].support, 0);
        assert_eq!(per[1].class, "PER");
        assert_eq!(per[1].support, 1);
        assert_eq!(per[1].predicted, 0);
    }

    #[test]
    fn mismatched_corpora_are_rejected() {
        let gold = corpus(vec![sentence("1", &["O", "O"])]);
        let short = corpus(vec![sentence("1", &["O"])]);
        assert!(matches!(score(&gold, &short), Err(Error::CorpusMismatch(_))));

        let mut renamed = gold.clone();
        renamed.sentences[0].rows[1].surface = "other".to_string();
        assert!(matches!(score(&gold, &renamed), Err(Error::CorpusMismatch(_))));

        let fewer = corpus(vec![]);
        assert!(matches!(score(&gold, &fewer), Err(Error::CorpusMismatch(_))));
    }

    #[test]
    fn macro_modes_differ_only_on_absent_classes() {
        let gold = corpus(vec![sentence("1", &["B-PER", "O"])]);
        let pred = gold.clone();
        let extra = vec!["LOC".to_string()];

        let excl = score_with(&gold, &pred, &extra, MacroMode::ExcludeAbsent).unwrap();
        assert_eq!(excl.per_class.len(), 2);
        assert_eq!(excl.macro_avg.f1, 1.0);

        let zeroed = score_with(&gold, &pred, &extra, MacroMode::AbsentCountsZero).unwrap();
        assert_eq!(zeroed.macro_avg.f1, 0.5);
        assert_eq!(zeroed.micro.f1, 1.0);
    }

    #[test]
    fn swapping_gold_and_pred_swaps_precision_and_recall() {
        let a = corpus(vec![
            sentence("1", &["B-PER", "I-PER", "O", "B-LOC"]),
            sentence("2", &["O", "B-GRP", "O"]),
        ]);
        let b = corpus(vec![
            sentence("1", &["B-PER", "O", "O", "B-LOC"]),
            sentence("2", &["B-CW", "I-CW", "O"]),
        ]);
        let ab = score(&a, &b).unwrap();
        let ba = score(&b, &a).unwrap();
        assert_eq!(ab.micro.precision, ba.micro.recall);
        assert_eq!(ab.micro.recall, ba.micro.precision);
        assert_eq!(ab.micro.f1, ba.micro.f1);
    }

    #[test]
    fn micro_is_invariant_under_sentence_reordering() {
        let mut rng = rng_from_seed(7);
        let classes = ["PER", "LOC", "GRP"];
        let mut gold_sents = Vec::new();
        let mut pred_sents = Vec::new();
        for i in 0..12 {
            let len = 3 + below(&mut rng, 5) as usize;
            let mut g = Vec::new();
            let mut p = Vec::new();
            for _ in 0..len {
                for out in [&mut g, &mut p] {
                    let c = classes[below(&mut rng, 3) as usize];
                    let label = match below(&mut rng, 3) {
                        0 => "O".to_string(),
                        1 => format!("B-{c}"),
                        _ => {
                            if out.last().is_some_and(|l: &String| l.ends_with(c) && l != "O") {
                                format!("I-{c}")
                            } else {
                                format!("B-{c}")
                            }
                        }
                    };
                    out.push(label);
                }
            }
            let g: Vec<&str> = g.iter().map(|s| s.as_str()).collect();
            let p: Vec<&str> = p.iter().map(|s| s.as_str()).collect();
            gold_sents.push(sentence(&format!("s{i}"), &g));
            pred_sents.push(sentence(&format!("s{i}"), &p));
        }

        let before = score(&corpus(gold_sents.clone()), &corpus(pred_sents.clone())).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let gold_perm: Vec<Sentence> = perm.iter().map(|&i| gold_sents[i].clone()).collect();
        let pred_perm: Vec<Sentence> = perm.iter().map(|&i| pred_sents[i].clone()).collect();
        let after = score(&corpus(gold_perm), &corpus(pred_perm)).unwrap();
        assert_eq!(before.micro, after.micro);
        assert_eq!(before.per_class, after.per_class);
    }

    #[test]
    fn text_table_has_one_row_per_class_plus_aggregates() {
        let gold = corpus(vec![sentence(
            "1",
            &["B-PER", "O", "B-LOC", "O", "B-GRP", "O", "B-CORP", "O", "B-PROD", "O", "B-CW"],
        )]);
        let report = score(&gold, &gold.clone()).unwrap();
        let text = report.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6 + 2);
        assert!(lines[0].starts_with("class"));
        let order: Vec<&str> =
            lines[1..7].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(order, ["CORP", "CW", "GRP", "LOC", "PER", "PROD"]);
        assert!(lines[7].starts_with("micro"));
        assert!(lines[8].starts_with("macro"));
    }

    #[test]
    fn externally_supplied_numbers_render_in_table_shape() {
        let classes = [
            ("CORP", 0.7376),
            ("CW", 0.6724),
            ("GRP", 0.8012),
            ("LOC", 0.8166),
            ("PER", 0.8313),
            ("PROD", 0.6905),
        ];
        let per_class: Vec<ClassMetrics> = classes
            .iter()
            .map(|&(c, f1)| ClassMetrics {
                class: c.to_string(),
                metrics: Prf { precision: f1, recall: f1, f1 },
                support: 100,
                predicted: 100,
            })
            .collect();
        let macro_f1 = classes.iter().map(|&(_, f)| f).sum::<f64>() / classes.len() as f64;
        let report = EvalReport {
            per_class,
            micro: Prf { precision: 0.7583, recall: 0.7583, f1: 0.7583 },
            macro_avg: Prf { precision: macro_f1, recall: macro_f1, f1: macro_f1 },
        };
        let text = report.render_text();
        assert!(text.contains("83.13"));
        assert!(text.contains("PER"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn kv_round_trip_is_exact() {
        let gold = corpus(vec![
            sentence("1", &["B-PER", "I-PER", "O", "B-LOC"]),
            sentence("2", &["O", "B-GRP", "B-PER"]),
        ]);
        let pred = corpus(vec![
            sentence("1", &["B-PER", "O", "O", "B-LOC"]),
            sentence("2", &["B-GRP", "I-GRP", "O"]),
        ]);
        let report = score(&gold, &pred).unwrap();
        let parsed = EvalReport::parse_kv(&report.render_kv()).unwrap();
        assert_eq!(parsed, report);

        // Irrational metric values survive the round trip bit for bit.
        let odd = EvalReport {
            per_class: vec![ClassMetrics {
                class: "X".to_string(),
                metrics: Prf {
                    precision: 1.0 / 3.0,
                    recall: 2.0_f64.sqrt() / 2.0,
                    f1: 0.1 + 0.2,
                },
                support: 7,
                predicted: 9,
            }],
            micro: Prf { precision: 1e-300, recall: 0.9999999999999999, f1: 0.5 },
            macro_avg: Prf { precision: 0.0, recall: 1.0, f1: f64::MIN_POSITIVE },
        };
        assert_eq!(EvalReport::parse_kv(&odd.render_kv()).unwrap(), odd);
    }

    #[test]
    fn kv_parser_rejects_malformed_input() {
        assert!(EvalReport::parse_kv("not a key value line").is_err());
        assert!(EvalReport::parse_kv("micro.precision=abc").is_err());
        assert!(EvalReport::parse_kv("micro.precision=0.5").is_err());
    }

    #[test]
    fn observed_classes_unions_both_sides() {
        let gold = corpus(vec![sentence("1", &["B-PER", "O"])]);
        let pred = corpus(vec![sentence("1", &["B-LOC", "O"])]);
        assert_eq!(observed_classes(&gold, &pred), ["LOC", "PER"]);
    }
}

//! CoNLL-style corpora in the IOB2 tagging scheme.
//!
//! Parsing, writing, validation/repair of tag sequences, span extraction,
//! span-candidate enumeration, and corpus statistics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One token with its IOB2 label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRow {
    pub surface: String,
    pub label: String,
}

/// A sentence: an id plus a non-empty list of token rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub rows: Vec<TokenRow>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.surface.as_str())
    }

    pub fn labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }
}

/// An ordered set of sentences plus the entity classes appearing in them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub label_classes: BTreeSet<String>,
}

impl Corpus {
    /// Builds a corpus from sentences, deriving `label_classes` from the rows.
    pub fn from_sentences(sentences: Vec<Sentence>) -> Result<Self> {
        let mut label_classes = BTreeSet::new();
        for sentence in &sentences {
            for row in &sentence.rows {
                if let Tag::Entity { class, .. } = parse_tag(&row.label)? {
                    label_classes.insert(class.to_string());
                }
            }
        }
        Ok(Corpus {
            sentences,
            label_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// A copy with every label replaced by `"O"` (an unlabeled corpus).
    pub fn stripped(&self) -> Corpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence {
                id: s.id.clone(),
                rows: s
                    .rows
                    .iter()
                    .map(|r| TokenRow {
                        surface: r.surface.clone(),
                        label: "O".to_string(),
                    })
                    .collect(),
            })
            .collect();
        Corpus {
            sentences,
            label_classes: BTreeSet::new(),
        }
    }
}

/// A token range, inclusive on both ends, with an optional entity class.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub cls: Option<String>,
}

impl Span {
    pub fn new(start: usize, end: usize, cls: impl Into<String>) -> Self {
        Span {
            start,
            end,
            cls: Some(cls.into()),
        }
    }

    pub fn unlabeled(start: usize, end: usize) -> Self {
        Span {
            start,
            end,
            cls: None,
        }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Which whitespace-separated columns hold the surface and the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub surface: usize,
    pub label: usize,
}

impl Default for ColumnSpec {
    /// Two-column `token label` layout.
    fn default() -> Self {
        ColumnSpec {
            surface: 0,
            label: 1,
        }
    }
}

impl ColumnSpec {
    /// The MultiCoNER-style four-column layout `token _ _ label`.
    pub fn multiconer() -> Self {
        ColumnSpec {
            surface: 0,
            label: 3,
        }
    }

    fn width(&self) -> usize {
        self.surface.max(self.label) + 1
    }
}

/// A parsed tag: `O` or `B-X`/`I-X`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Entity { begin: bool, class: &'a str },
}

/// Splits a tag string into its scheme prefix and class, rejecting anything
/// that is not `O`, `B-X`, or `I-X` with a non-empty class.
pub fn parse_tag(tag: &str) -> Result<Tag<'_>> {
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    let (prefix, class) = match tag.split_once('-') {
        Some(parts) => parts,
        None => {
            return Err(Error::InvalidTag {
                tag: tag.to_string(),
                msg: "expected `O` or `{B|I}-CLASS`".to_string(),
            })
        }
    };
    if class.is_empty() {
        return Err(Error::InvalidTag {
            tag: tag.to_string(),
            msg: "empty class".to_string(),
        });
    }
    match prefix {
        "B" => Ok(Tag::Entity { begin: true, class }),
        "I" => Ok(Tag::Entity {
            begin: false,
            class,
        }),
        _ => Err(Error::InvalidTag {
            tag: tag.to_string(),
            msg: format!("unknown prefix `{prefix}`"),
        }),
    }
}

/// Parses CoNLL-style text: blank-line sentence separation, `#` comment
/// lines, one token per row. Sentence ids come from `# id ...` comments when
/// present and are zero-based ordinals otherwise.
pub fn parse_conll(text: &str, columns: ColumnSpec) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut pending_id: Option<String> = None;
    let mut rows: Vec<TokenRow> = Vec::new();

    let mut flush = |pending_id: &mut Option<String>, rows: &mut Vec<TokenRow>| {
        if !rows.is_empty() {
            let id = pending_id
                .take()
                .unwrap_or_else(|| sentences.len().to_string());
            sentences.push(Sentence {
                id,
                rows: std::mem::take(rows),
            });
        }
        *pending_id = None;
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            flush(&mut pending_id, &mut rows);
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(id) = comment.strip_prefix("id ") {
                pending_id = Some(id.trim().to_string());
            } else if comment == "id" {
                pending_id = Some(String::new());
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < columns.width() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "expected at least {} columns, found {}",
                    columns.width(),
                    fields.len()
                ),
            });
        }
        let surface = fields[columns.surface];
        let label = fields[columns.label];
        if surface.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty surface".to_string(),
            });
        }
        parse_tag(label).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        rows.push(TokenRow {
            surface: surface.to_string(),
            label: label.to_string(),
        });
    }
    flush(&mut pending_id, &mut rows);

    Corpus::from_sentences(sentences)
}

/// Writes the corpus back to CoNLL text. Inverse of [`parse_conll`] under the
/// same column spec: one `# id` comment per sentence, one blank line after
/// each sentence block, single-space column separation with `_` filler.
pub fn write_conll(corpus: &Corpus, columns: ColumnSpec) -> String {
    let mut out = String::new();
    let width = columns.width();
    for sentence in &corpus.sentences {
        let _ = writeln!(out, "# id {}", sentence.id);
        for row in &sentence.rows {
            let mut fields = vec!["_"; width];
            fields[columns.surface] = &row.surface;
            fields[columns.label] = &row.label;
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out.push('\n');
    }
    out
}

/// One IOB2 violation found by [`validate_and_repair_iob`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IobViolation {
    pub index: usize,
    pub found: String,
    pub repaired_to: String,
}

/// Checks a tag sequence against IOB2 and repairs it: any `I-X` whose
/// predecessor is not `B-X`/`I-X` becomes `B-X`. Tags must be syntactically
/// well-formed; anything else is an error.
pub fn validate_and_repair_iob(labels: &[String]) -> Result<(Vec<String>, Vec<IobViolation>)> {
    let mut repaired: Vec<String> = Vec::with_capacity(labels.len());
    let mut violations = Vec::new();
    let mut prev_class: Option<String> = None;

    for (i, label) in labels.iter().enumerate() {
        match parse_tag(label)? {
            Tag::Outside => {
                repaired.push("O".to_string());
                prev_class = None;
            }
            Tag::Entity { begin: true, class } => {
                repaired.push(label.clone());
                prev_class = Some(class.to_string());
            }
            Tag::Entity {
                begin: false,
                class,
            } => {
                let continues = prev_class.as_deref() == Some(class);
                if continues {
                    repaired.push(label.clone());
                } else {
                    let fixed = format!("B-{class}");
                    violations.push(IobViolation {
                        index: i,
                        found: label.clone(),
                        repaired_to: fixed.clone(),
                    });
                    repaired.push(fixed);
                }
                prev_class = Some(class.to_string());
            }
        }
    }
    Ok((repaired, violations))
}

/// True iff the sequence is already valid IOB2.
pub fn is_valid_iob(labels: &[String]) -> Result<bool> {
    let (_, violations) = validate_and_repair_iob(labels)?;
    Ok(violations.is_empty())
}

/// Extracts maximal entity runs from a valid IOB2 sequence.
/// Errors on invalid IOB2 (repair first).
pub fn spans_from_labels(labels: &[String]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;

    for (i, label) in labels.iter().enumerate() {
        match parse_tag(label)? {
            Tag::Outside => {
                if let Some((start, class)) = open.take() {
                    spans.push(Span::new(start, i - 1, class));
                }
            }
            Tag::Entity { begin: true, class } => {
                if let Some((start, open_class)) = open.take() {
                    spans.push(Span::new(start, i - 1, open_class));
                }
                open = Some((i, class.to_string()));
            }
            Tag::Entity {
                begin: false,
                class,
            } => match &open {
                Some((_, open_class)) if open_class == class => {}
                _ => {
                    return Err(Error::InvalidIob(format!(
                        "`{label}` at index {i} does not continue an open `{class}` entity"
                    )))
                }
            },
        }
    }
    if let Some((start, class)) = open {
        spans.push(Span::new(start, labels.len() - 1, class));
    }
    Ok(spans)
}

/// Inverse of [`spans_from_labels`]: paints classed spans onto an all-`O`
/// canvas of the given length. Spans must be classed, in range, and
/// non-overlapping.
pub fn labels_from_spans(spans: &[Span], length: usize) -> Result<Vec<String>> {
    let mut labels = vec!["O".to_string(); length];
    let mut occupied = vec![false; length];

    for span in spans {
        let class = span.cls.as_deref().ok_or_else(|| {
            Error::InvalidSpan(format!("span ({}, {}) has no class", span.start, span.end))
        })?;
        if span.start > span.end || span.end >= length {
            return Err(Error::InvalidSpan(format!(
                "({}, {}) out of range for length {length}",
                span.start, span.end
            )));
        }
        for i in span.start..=span.end {
            if occupied[i] {
                return Err(Error::InvalidSpan(format!(
                    "overlap at token {i} between spans"
                )));
            }
            occupied[i] = true;
            labels[i] = if i == span.start {
                format!("B-{class}")
            } else {
                format!("I-{class}")
            };
        }
    }
    Ok(labels)
}

/// All token ranges of width 1..=`k_max`, width-major then start order, each
/// labeled `true` iff its boundaries exactly match a gold span (class
/// ignored).
pub fn enumerate_spans(length: usize, k_max: usize, gold: &[Span]) -> Vec<(Span, bool)> {
    assert!(k_max >= 1, "k_max must be at least 1");
    let gold_bounds: BTreeSet<(usize, usize)> = gold.iter().map(|s| (s.start, s.end)).collect();
    let mut out = Vec::new();
    for width in 1..=k_max.min(length) {
        for start in 0..=(length - width) {
            let end = start + width - 1;
            out.push((
                Span::unlabeled(start, end),
                gold_bounds.contains(&(start, end)),
            ));
        }
    }
    out
}

/// Per-class entity distribution plus candidate-span distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub sentence_count: usize,
    pub token_count: usize,
    pub entity_count: usize,
    /// (class, count, percentage of all entities), in class order.
    pub per_class: Vec<(String, usize, f64)>,
    pub k_max: usize,
    pub candidate_count: usize,
    pub span_pct: f64,
    pub not_span_pct: f64,
}

/// Counts entities per class and labels every enumerated candidate span
/// (width at most `k_max`) as entity-span or not.
pub fn corpus_stats(corpus: &Corpus, k_max: usize) -> Result<StatsReport> {
    let mut class_counts: Vec<(String, usize)> = corpus
        .label_classes
        .iter()
        .map(|c| (c.clone(), 0usize))
        .collect();
    let mut entity_count = 0usize;
    let mut candidate_count = 0usize;
    let mut positive_count = 0usize;

    for sentence in &corpus.sentences {
        let labels = sentence.labels();
        let spans = spans_from_labels(&labels)?;
        entity_count += spans.len();
        for span in &spans {
            let class = span.cls.as_deref().unwrap();
            if let Some(entry) = class_counts.iter_mut().find(|(c, _)| c == class) {
                entry.1 += 1;
            }
        }
        for (_, positive) in enumerate_spans(sentence.len(), k_max, &spans) {
            candidate_count += 1;
            if positive {
                positive_count += 1;
            }
        }
    }

    let per_class = class_counts
        .into_iter()
        .map(|(class, count)| {
            let pct = if entity_count == 0 {
                0.0
            } else {
                count as f64 / entity_count as f64 * 100.0
            };
            (class, count, pct)
        })
        .collect();
    let (span_pct, not_span_pct) = if candidate_count == 0 {
        (0.0, 0.0)
    } else {
        let pos = positive_count as f64 / candidate_count as f64 * 100.0;
        (pos, 100.0 - pos)
    };

    Ok(StatsReport {
        sentence_count: corpus.len(),
        token_count: corpus.token_count(),
        entity_count,
        per_class,
        k_max,
        candidate_count,
        span_pct,
        not_span_pct,
    })
}

impl StatsReport {
    /// Plain-text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences: {}", self.sentence_count);
        let _ = writeln!(out, "tokens:    {}", self.token_count);
        let _ = writeln!(out, "entities:  {}", self.entity_count);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<8} {:>8} {:>8}", "class", "count", "%");
        for (class, count, pct) in &self.per_class {
            let _ = writeln!(out, "{class:<8} {count:>8} {pct:>8.2}");
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "candidate spans (k_max = {}): {}",
            self.k_max, self.candidate_count
        );
        let _ = writeln!(
            out,
            "{:<16} {:>8.2}\n{:<16} {:>8.2}",
            "entity span %", self.span_pct, "not entity span %", self.not_span_pct
        );
        out
    }

    /// Machine-readable key/value lines.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences = {}", self.sentence_count);
        let _ = writeln!(out, "tokens = {}", self.token_count);
        let _ = writeln!(out, "entities = {}", self.entity_count);
        for (class, count, pct) in &self.per_class {
            let _ = writeln!(out, "class.{class}.count = {count}");
            let _ = writeln!(out, "class.{class}.pct = {pct}");
        }
        let _ = writeln!(out, "spans.k_max = {}", self.k_max);
        let _ = writeln!(out, "spans.candidates = {}", self.candidate_count);
        let _ = writeln!(out, "spans.entity_pct = {}", self.span_pct);
        let _ = writeln!(out, "spans.not_entity_pct = {}", self.not_span_pct);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn parse_two_rows_one_sentence() {
        let corpus = parse_conll("John B-PER\nok O\n\n", ColumnSpec::default()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences[0].len(), 2);
        assert_eq!(corpus.sentences[0].rows[0].surface, "John");
        assert_eq!(corpus.sentences[0].rows[0].label, "B-PER");
    }

    #[test]
    fn parse_collects_label_classes() {
        let text = "a B-PER\nb I-PER\nc B-LOC\nd O\n";
        let corpus = parse_conll(text, ColumnSpec::default()).unwrap();
        let classes: Vec<&str> = corpus.label_classes.iter().map(|s| s.as_str()).collect();
        assert_eq!(classes, vec!["LOC", "PER"]);
    }

    #[test]
    fn parse_too_few_columns_reports_line() {
        let err = parse_conll("a O\nword\n", ColumnSpec::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn parse_rejects_unknown_label_shape() {
        let err = parse_conll("a Q-PER\n", ColumnSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_empty_file_is_empty_corpus() {
        let corpus = parse_conll("", ColumnSpec::default()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn parse_multiconer_columns() {
        let text = "tok _ _ B-CW\n";
        let corpus = parse_conll(text, ColumnSpec::multiconer()).unwrap();
        assert_eq!(corpus.sentences[0].rows[0].label, "B-CW");
    }

    #[test]
    fn parse_keeps_comment_ids() {
        let text = "# id abc-1\nx O\n\ny O\n";
        let corpus = parse_conll(text, ColumnSpec::default()).unwrap();
        assert_eq!(corpus.sentences[0].id, "abc-1");
        assert_eq!(corpus.sentences[1].id, "1");
    }

    #[test]
    fn write_empty_corpus_is_empty_text() {
        assert_eq!(write_conll(&Corpus::default(), ColumnSpec::default()), "");
    }

    #[test]
    fn write_single_sentence_ends_with_one_blank_line() {
        let corpus = parse_conll("a O\n", ColumnSpec::default()).unwrap();
        let text = write_conll(&corpus, ColumnSpec::default());
        assert!(text.ends_with("a O\n\n"));
        assert!(!text.ends_with("\n\n\n"));
    }

    #[test]
    fn round_trip_three_sentences() {
        let text = "# id s0\na B-PER\nb I-PER\n\n# id s1\nc O\n\n# id s2\nd B-LOC\n\n";
        let corpus = parse_conll(text, ColumnSpec::default()).unwrap();
        assert_eq!(corpus.len(), 3);
        let written = write_conll(&corpus, ColumnSpec::default());
        let reparsed = parse_conll(&written, ColumnSpec::default()).unwrap();
        assert_eq!(corpus, reparsed);
    }

    #[test]
    fn repair_orphan_inside_tag() {
        let (fixed, violations) = validate_and_repair_iob(&labels(&["I-PER", "O"])).unwrap();
        assert_eq!(fixed, labels(&["B-PER", "O"]));
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].index, 0);
    }

    #[test]
    fn repair_accepts_valid_sequence() {
        let (fixed, violations) = validate_and_repair_iob(&labels(&["B-PER", "I-PER"])).unwrap();
        assert_eq!(fixed, labels(&["B-PER", "I-PER"]));
        assert!(violations.is_empty());
    }

    #[test]
    fn repair_class_switch() {
        let (fixed, violations) = validate_and_repair_iob(&labels(&["B-PER", "I-LOC"])).unwrap();
        assert_eq!(fixed, labels(&["B-PER", "B-LOC"]));
        assert_eq!(violations.len(), 1);
    }

    #[test]
    fn repair_rejects_malformed_tag() {
        assert!(validate_and_repair_iob(&labels(&["Q-PER"])).is_err());
    }

    #[test]
    fn spans_basic_extraction() {
        let spans = spans_from_labels(&labels(&["O", "B-PER", "I-PER", "O", "B-LOC"])).unwrap();
        assert_eq!(
            spans,
            vec![Span::new(1, 2, "PER"), Span::new(4, 4, "LOC")]
        );
    }

    #[test]
    fn spans_all_outside() {
        assert!(spans_from_labels(&labels(&["O", "O"])).unwrap().is_empty());
    }

    #[test]
    fn spans_adjacent_begins() {
        let spans = spans_from_labels(&labels(&["B-CW", "B-CW"])).unwrap();
        assert_eq!(spans, vec![Span::new(0, 0, "CW"), Span::new(1, 1, "CW")]);
    }

    #[test]
    fn spans_reject_invalid_iob() {
        assert!(spans_from_labels(&labels(&["O", "I-PER"])).is_err());
    }

    #[test]
    fn labels_from_spans_basic() {
        let out = labels_from_spans(&[Span::new(0, 1, "PER")], 3).unwrap();
        assert_eq!(out, labels(&["B-PER", "I-PER", "O"]));
    }

    #[test]
    fn labels_from_spans_empty() {
        assert_eq!(labels_from_spans(&[], 2).unwrap(), labels(&["O", "O"]));
    }

    #[test]
    fn labels_from_spans_overlap_is_error() {
        let err =
            labels_from_spans(&[Span::new(0, 1, "PER"), Span::new(1, 2, "LOC")], 3).unwrap_err();
        assert!(matches!(err, Error::InvalidSpan(_)));
    }

    #[test]
    fn enumerate_counts_and_positives() {
        let gold = vec![Span::new(0, 1, "PER")];
        let candidates = enumerate_spans(3, 2, &gold);
        assert_eq!(candidates.len(), 5); // 3 width-1 + 2 width-2
        let positives: Vec<&Span> = candidates
            .iter()
            .filter(|(_, p)| *p)
            .map(|(s, _)| s)
            .collect();
        assert_eq!(positives, vec![&Span::unlabeled(0, 1)]);
    }

    #[test]
    fn enumerate_single_token() {
        let candidates = enumerate_spans(1, 4, &[]);
        assert_eq!(candidates, vec![(Span::unlabeled(0, 0), false)]);
    }

    #[test]
    fn enumerate_gold_wider_than_k_max_has_no_positive() {
        let gold = vec![Span::new(0, 3, "CW")];
        let candidates = enumerate_spans(5, 2, &gold);
        assert!(candidates.iter().all(|(_, p)| !p));
    }

    #[test]
    fn stats_hand_counts() {
        let text = "a B-PER\n\nb B-PER\n\nc B-LOC\n\n";
        let corpus = parse_conll(text, ColumnSpec::default()).unwrap();
        let stats = corpus_stats(&corpus, 8).unwrap();
        assert_eq!(stats.entity_count, 3);
        let per: Vec<(&str, usize)> = stats
            .per_class
            .iter()
            .map(|(c, n, _)| (c.as_str(), *n))
            .collect();
        assert_eq!(per, vec![("LOC", 1), ("PER", 2)]);
        let pct: Vec<f64> = stats.per_class.iter().map(|(_, _, p)| *p).collect();
        assert!((pct[0] - 33.333333).abs() < 1e-4);
        assert!((pct[1] - 66.666666).abs() < 1e-4);
        let total: f64 = pct.iter().sum();
        assert!((total - 100.0).abs() < 0.01);
        assert!((stats.span_pct + stats.not_span_pct - 100.0).abs() < 0.01);
    }

    #[test]
    fn stats_zero_entities_is_not_an_error() {
        let corpus = parse_conll("a O\nb O\n\n", ColumnSpec::default()).unwrap();
        let stats = corpus_stats(&corpus, 8).unwrap();
        assert_eq!(stats.entity_count, 0);
        assert!(stats.per_class.is_empty());
        assert_eq!(stats.span_pct, 0.0);
    }

    #[test]
    fn enumerate_size_formula() {
        for l in 1..12usize {
            for k in 1..10usize {
                let expected: usize = (1..=k.min(l)).map(|w| l - w + 1).sum();
                assert_eq!(enumerate_spans(l, k, &[]).len(), expected);
            }
        }
    }
}

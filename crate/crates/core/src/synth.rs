//! Deterministic synthetic NER corpus: six entity classes with disjoint,
//! character-distinctive lexicons embedded in template sentences. An
//! ambiguity rate controls how often entity surface forms also appear as
//! plain words, mimicking ambiguous entities in real queries.

use crate::corpus::{Corpus, Sentence, TokenRow};
use crate::error::Result;
use crate::rng::{below, rng_from_seed, uniform53};

pub const CLASSES: [&str; 6] = ["CORP", "CW", "GRP", "LOC", "PER", "PROD"];

/// Two-letter surface prefix per class, aligned with `CLASSES`. Every token
/// of a class starts with its prefix, so classes never share surface forms.
const PREFIXES: [&str; 6] = ["dr", "so", "ul", "ko", "am", "fy"];

const CONSONANTS: [char; 14] =
    ['b', 'c', 'd', 'f', 'g', 'l', 'm', 'n', 'r', 's', 't', 'v', 'x', 'z'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub sentences: usize,
    /// Probability that a sentence carries one entity surface form used as a
    /// plain word.
    pub ambiguity: f64,
    /// Entity head forms per class.
    pub lexicon_size: usize,
    /// Probability that an entity continues into a second token.
    pub two_token_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            sentences: 200,
            ambiguity: 0.05,
            lexicon_size: 8,
            two_token_rate: 0.4,
        }
    }
}

/// Head form i of a class: prefix + consonant + vowel + consonant.
fn head_form(class: usize, i: usize) -> String {
    let mut s = String::from(PREFIXES[class]);
    s.push(CONSONANTS[i % 14]);
    s.push(VOWELS[i % 5]);
    s.push(CONSONANTS[(3 * i + 1) % 14]);
    s
}

/// Continuation form i: prefix + 'u' + consonant + vowel. The fixed 'u' in
/// third position keeps continuations disjoint from head forms.
fn cont_form(class: usize, i: usize) -> String {
    let mut s = String::from(PREFIXES[class]);
    s.push('u');
    s.push(CONSONANTS[(5 * i + 2) % 14]);
    s.push(VOWELS[(i + 2) % 5]);
    s
}

enum Item {
    W(&'static str),
    E(usize),
}

use Item::{E, W};

/// Class indices into `CLASSES`: CORP 0, CW 1, GRP 2, LOC 3, PER 4, PROD 5.
fn templates() -> Vec<Vec<Item>> {
    vec![
        vec![W("meet"), E(4), W("this"), W("week")],
        vec![W("travel"), W("to"), E(3), W("soon")],
        vec![E(2), W("will"), W("gather"), W("near"), E(3)],
        vec![W("the"), E(0), W("launched"), E(5), W("today")],
        vec![W("read"), E(1), W("with"), E(4)],
        vec![W("visit"), E(3), W("and"), W("see"), E(1)],
        vec![E(4), W("joined"), E(2), W("last"), W("year")],
        vec![E(0), W("hired"), E(4), W("quietly")],
        vec![W("buy"), E(5), W("from"), E(0)],
        vec![W("talk"), W("about"), E(1), W("tonight")],
    ]
}

/// Deterministic synthetic corpus. Equal configs give equal corpora.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    assert!(cfg.lexicon_size >= 1, "lexicon_size must be >= 1");
    let mut rng = rng_from_seed(cfg.seed);
    let templates = templates();
    let n_cont = (cfg.lexicon_size / 2).max(1);

    let mut sentences = Vec::with_capacity(cfg.sentences);
    for i in 0..cfg.sentences {
        let mut rows = Vec::new();
        let template = &templates[below(&mut rng, templates.len())];
        for item in template {
            match item {
                W(word) => rows.push(TokenRow {
                    surface: (*word).to_string(),
                    label: "O".to_string(),
                }),
                E(class) => {
                    let head = head_form(*class, below(&mut rng, cfg.lexicon_size));
                    rows.push(TokenRow {
                        surface: head,
                        label: format!("B-{}", CLASSES[*class]),
                    });
                    if uniform53(&mut rng) < cfg.two_token_rate {
                        let cont = cont_form(*class, below(&mut rng, n_cont));
                        rows.push(TokenRow {
                            surface: cont,
                            label: format!("I-{}", CLASSES[*class]),
                        });
                    }
                }
            }
        }
        if uniform53(&mut rng) < cfg.ambiguity {
            let class = below(&mut rng, 6);
            let form = head_form(class, below(&mut rng, cfg.lexicon_size));
            for word in ["the", "term"] {
                rows.push(TokenRow { surface: word.to_string(), label: "O".to_string() });
            }
            rows.push(TokenRow { surface: form, label: "O".to_string() });
            for word in ["is", "plain"] {
                rows.push(TokenRow { surface: word.to_string(), label: "O".to_string() });
            }
        }
        sentences.push(Sentence { id: format!("synth-{}-{i}", cfg.seed), rows });
    }
    Corpus::from_sentences(sentences)
}

/// True if `surface` is one of the entity forms any class can produce under
/// `lexicon_size`.
pub fn is_entity_form(surface: &str, lexicon_size: usize) -> bool {
    let n_cont = (lexicon_size / 2).max(1);
    (0..CLASSES.len()).any(|class| {
        (0..lexicon_size).any(|i| head_form(class, i) == surface)
            || (0..n_cont).any(|i| cont_form(class, i) == surface)
    })
}

//! Word encoder: subword vocabulary, greedy tokenizer, trainable embeddings,
//! attention pooling from subwords to words, and a windowed feed-forward
//! contextualizer producing the sentence's word representations.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::Tensor;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Longest n-gram collected by the vocabulary builder.
const MAX_NGRAM: usize = 4;

/// Subword inventory with dense, stable ids. Entry 0 is PAD, entry 1 UNK,
/// then every single character seen at build time, then the most frequent
/// 2..4-grams that fit the size budget.
#[derive(Debug)]
pub struct SubwordVocab {
    entries: Vec<String>,
    lookup: HashMap<String, usize>,
    max_chars: usize,
    truncations: AtomicU64,
}

impl PartialEq for SubwordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Clone for SubwordVocab {
    fn clone(&self) -> Self {
        SubwordVocab {
            entries: self.entries.clone(),
            lookup: self.lookup.clone(),
            max_chars: self.max_chars,
            truncations: AtomicU64::new(self.truncation_count()),
        }
    }
}

impl SubwordVocab {
    /// Builds from token surfaces. All single characters are kept so UNK
    /// only ever covers characters unseen at build time; n-grams are ranked
    /// by frequency with lexicographic tie-break and truncated to fit
    /// `target_size` total entries.
    pub fn build(corpus: &Corpus, target_size: usize) -> Result<SubwordVocab> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for sentence in &corpus.sentences {
            for surface in sentence.surfaces() {
                let chars: Vec<char> = surface.chars().collect();
                for n in 1..=MAX_NGRAM.min(chars.len()) {
                    for window in chars.windows(n) {
                        let gram: String = window.iter().collect();
                        *counts.entry(gram).or_insert(0) += 1;
                    }
                }
            }
        }

        let mut singles: Vec<String> = counts
            .keys()
            .filter(|g| g.chars().count() == 1)
            .cloned()
            .collect();
        singles.sort();
        if target_size < singles.len() + 2 {
            return Err(Error::Config(format!(
                "vocab size {target_size} cannot hold {} single characters plus PAD/UNK",
                singles.len()
            )));
        }

        let mut ngrams: Vec<(String, u64)> = counts
            .iter()
            .filter(|(g, _)| g.chars().count() > 1)
            .map(|(g, c)| (g.clone(), *c))
            .collect();
        ngrams.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let budget = target_size - 2 - singles.len();

        let mut entries = Vec::with_capacity(target_size.min(2 + singles.len() + ngrams.len()));
        entries.push(PAD_TOKEN.to_string());
        entries.push(UNK_TOKEN.to_string());
        entries.extend(singles);
        entries.extend(ngrams.into_iter().take(budget).map(|(g, _)| g));

        SubwordVocab::from_entries(entries)
    }

    /// Rebuilds from serialized entries; PAD and UNK must sit at 0 and 1.
    pub fn from_entries(entries: Vec<String>) -> Result<SubwordVocab> {
        if entries.len() < 2 || entries[0] != PAD_TOKEN || entries[1] != UNK_TOKEN {
            return Err(Error::Container(
                "vocabulary must start with <pad>, <unk>".to_string(),
            ));
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        for (id, e) in entries.iter().enumerate() {
            if lookup.insert(e.clone(), id).is_some() {
                return Err(Error::Container(format!("duplicate vocabulary entry `{e}`")));
            }
        }
        let max_chars = entries
            .iter()
            .skip(2)
            .map(|e| e.chars().count())
            .max()
            .unwrap_or(1);
        Ok(SubwordVocab {
            entries,
            lookup,
            max_chars,
            truncations: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn subword(&self, id: usize) -> &str {
        &self.entries[id]
    }

    /// Words whose subword list was cut to fit K_sub so far.
    pub fn truncation_count(&self) -> u64 {
        self.truncations.load(Ordering::Relaxed)
    }

    /// Greedy longest-match left to right; a character matching nothing
    /// becomes UNK. Never empty for a non-empty word.
    pub fn tokenize(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = false;
            let longest = self.max_chars.min(chars.len() - i);
            for n in (1..=longest).rev() {
                let gram: String = chars[i..i + n].iter().collect();
                if let Some(&id) = self.lookup.get(&gram) {
                    ids.push(id);
                    i += n;
                    matched = true;
                    break;
                }
            }
            if !matched {
                ids.push(UNK_ID);
                i += 1;
            }
        }
        ids
    }

    /// Tokenize, keeping at most `k_sub` ids (the first ones); cuts are
    /// counted for reporting.
    pub fn tokenize_capped(&self, word: &str, k_sub: usize) -> Vec<usize> {
        let mut ids = self.tokenize(word);
        if ids.len() > k_sub {
            ids.truncate(k_sub);
            self.truncations.fetch_add(1, Ordering::Relaxed);
        }
        ids
    }
}

/// The two matrices of one attention-pooling site.
#[derive(Debug, Clone)]
pub struct PoolingParams {
    /// [d, 1]
    pub w_a: Tensor,
    /// [K, K] for the site's fixed K
    pub w_alpha: Tensor,
}

impl PoolingParams {
    pub fn k(&self) -> usize {
        self.w_alpha.rows()
    }
}

/// Attention pooling of `h` [K, d] to one row [1, d]:
/// `C = tanh(H W_a)`, `alpha = masked_softmax(C^T W_alpha)`, `out = alpha H`.
/// Masked rows of `h` get exactly zero weight.
pub fn attention_pool(h: &Tensor, mask: &[bool], params: &PoolingParams) -> Result<Tensor> {
    let k = h.rows();
    if params.w_alpha.shape() != [k, k] || mask.len() != k {
        return Err(Error::ShapeMismatch {
            op: "attention_pool",
            lhs: h.shape(),
            rhs: params.w_alpha.shape(),
        });
    }
    let c = h.matmul(&params.w_a)?.tanh();
    let scores = c.reshape(1, k)?.matmul(&params.w_alpha)?;
    let alpha = scores.masked_softmax(mask)?;
    alpha.matmul(h)
}

/// Everything the encoder learns.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    /// [|vocab|, d]; row 0 is the trained PAD vector.
    pub embed: Tensor,
    pub word_pool: PoolingParams,
    /// [(2w+1)d, d]
    pub ctx_w1: Tensor,
    /// [1, d]
    pub ctx_b1: Tensor,
    /// [d, d]
    pub ctx_w2: Tensor,
    /// [1, d]
    pub ctx_b2: Tensor,
    pub window: usize,
    pub k_sub: usize,
}

impl EncoderParams {
    pub fn d(&self) -> usize {
        self.embed.cols()
    }
}

/// One pooled vector per word: subword ids padded/masked to K_sub, embedded,
/// attention-pooled. Output [l, d].
pub fn encode_words(
    surfaces: &[&str],
    vocab: &SubwordVocab,
    params: &EncoderParams,
) -> Result<Tensor> {
    assert!(!surfaces.is_empty(), "encode_words on empty sentence");
    let k_sub = params.k_sub;
    let mut pooled = Vec::with_capacity(surfaces.len());
    for word in surfaces {
        let ids = vocab.tokenize_capped(word, k_sub);
        let mut padded = ids.clone();
        padded.resize(k_sub, PAD_ID);
        let mask: Vec<bool> = (0..k_sub).map(|i| i < ids.len()).collect();
        let embeds = params.embed.gather_rows(&padded)?;
        pooled.push(attention_pool(&embeds, &mask, &params.word_pool)?);
    }
    let refs: Vec<&Tensor> = pooled.iter().collect();
    Tensor::concat_rows(&refs)
}

/// Two affine maps with a tanh between, over the window-concatenated word
/// vectors. Out-of-range window slots are filled with the trained PAD
/// embedding. Output [l, d].
pub fn contextualize(word_reprs: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let l = word_reprs.rows();
    let w = params.window;

    let padded = if w == 0 {
        word_reprs.clone()
    } else {
        let pad_row = params.embed.gather_rows(&vec![PAD_ID; w])?;
        Tensor::concat_rows(&[&pad_row, word_reprs, &pad_row])?
    };
    let parts: Vec<Tensor> = (0..2 * w + 1)
        .map(|offset| {
            let idx: Vec<usize> = (0..l).map(|i| i + offset).collect();
            padded.gather_rows(&idx)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    let x = Tensor::concat_cols(&refs)?;

    let z = x.matmul(&params.ctx_w1)?.add_rowwise(&params.ctx_b1)?.tanh();
    z.matmul(&params.ctx_w2)?.add_rowwise(&params.ctx_b2)
}

/// Full encoder: pooled word vectors, then contextualization. Output [l, d].
pub fn encode_sentence(
    surfaces: &[&str],
    vocab: &SubwordVocab,
    params: &EncoderParams,
) -> Result<Tensor> {
    let words = encode_words(surfaces, vocab, params)?;
    contextualize(&words, params)
}

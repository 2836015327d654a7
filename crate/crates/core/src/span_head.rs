//! Binary span classifier: pooled span representations, a two-layer
//! feed-forward head, and focal loss over enumerated candidate spans.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::autodiff::{focal_term, Tensor};
use crate::corpus::{enumerate_spans, Span};
use crate::encoder::{attention_pool, PoolingParams};
use crate::error::{Error, Result};

/// Candidate class indices: 0 = not an entity span, 1 = entity span.
pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub gamma: f64,
    /// (alpha_0, alpha_1): weight for the negative and positive class.
    pub alpha: (f64, f64),
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            gamma: 0.5,
            alpha: (1.0, 1.0),
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.alpha.0 <= 0.0 || self.alpha.1 <= 0.0 {
            return Err(Error::Config(format!(
                "alpha components must be > 0, got ({}, {})",
                self.alpha.0, self.alpha.1
            )));
        }
        Ok(())
    }

    pub fn alpha_for(&self, y: usize) -> f64 {
        if y == POSITIVE {
            self.alpha.1
        } else {
            self.alpha.0
        }
    }
}

/// Span pooling plus the classifying FFN. The evaluation counter proves the
/// head inactive where the pipeline promises not to run it.
#[derive(Debug, Clone)]
pub struct SpanHeadParams {
    pub pool: PoolingParams,
    /// [d, d_h]
    pub ffn_w1: Tensor,
    /// [1, d_h]
    pub ffn_b1: Tensor,
    /// [d_h, 2]
    pub ffn_w2: Tensor,
    /// [1, 2]
    pub ffn_b2: Tensor,
    pub evals: Arc<AtomicU64>,
}

impl SpanHeadParams {
    pub fn k_max(&self) -> usize {
        self.pool.k()
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

/// Eq.-1 focal term for one candidate: `-alpha_y (1 - p_y)^gamma ln(p_y)`,
/// with `p_y` clamped to 1e-12 inside the log only.
pub fn focal_loss(y: usize, p_hat: (f64, f64), cfg: &FocalConfig) -> f64 {
    let p_y = if y == POSITIVE { p_hat.1 } else { p_hat.0 };
    focal_term(p_y, cfg.gamma, cfg.alpha_for(y))
}

/// Attention-pooled representation of one span: rows start..=end of the word
/// representations, padded and masked to k_max. Output [1, d].
pub fn span_representation(
    word_reprs: &Tensor,
    span: &Span,
    params: &SpanHeadParams,
) -> Result<Tensor> {
    let k_max = params.k_max();
    let l = word_reprs.rows();
    let d = word_reprs.cols();
    if span.end >= l || span.start > span.end {
        return Err(Error::InvalidSpan(format!(
            "({}, {}) out of range for length {l}",
            span.start, span.end
        )));
    }
    let width = span.width();
    if width > k_max {
        return Err(Error::InvalidSpan(format!(
            "width {width} exceeds k_max {k_max}"
        )));
    }
    let rows = word_reprs.slice_rows(span.start, width)?;
    let padded = if width == k_max {
        rows
    } else {
        Tensor::concat_rows(&[&rows, &Tensor::zeros(k_max - width, d)])?
    };
    let mask: Vec<bool> = (0..k_max).map(|i| i < width).collect();
    attention_pool(&padded, &mask, &params.pool)
}

/// FFN logits [1, 2] for one span; counts as one head evaluation.
pub fn span_logits(word_reprs: &Tensor, span: &Span, params: &SpanHeadParams) -> Result<Tensor> {
    params.evals.fetch_add(1, Ordering::Relaxed);
    let rep = span_representation(word_reprs, span, params)?;
    let hidden = rep.matmul(&params.ffn_w1)?.add_rowwise(&params.ffn_b1)?.tanh();
    hidden.matmul(&params.ffn_w2)?.add_rowwise(&params.ffn_b2)
}

/// Mean focal loss over explicit labeled candidates. Errors on an empty
/// candidate list.
pub fn span_loss_over(
    word_reprs: &Tensor,
    candidates: &[(Span, bool)],
    params: &SpanHeadParams,
    cfg: &FocalConfig,
) -> Result<Tensor> {
    if candidates.is_empty() {
        return Err(Error::InvalidSpan("no candidate spans".to_string()));
    }
    let mut losses = Vec::with_capacity(candidates.len());
    for (span, positive) in candidates {
        let y = if *positive { POSITIVE } else { NEGATIVE };
        let logits = span_logits(word_reprs, span, params)?;
        losses.push(logits.focal_from_logits(y, cfg.gamma, cfg.alpha_for(y))?);
    }
    let refs: Vec<&Tensor> = losses.iter().collect();
    Ok(Tensor::concat_rows(&refs)?.mean())
}

/// Mean focal loss over every enumerated candidate of the sentence.
pub fn span_loss(
    word_reprs: &Tensor,
    gold: &[Span],
    params: &SpanHeadParams,
    cfg: &FocalConfig,
) -> Result<Tensor> {
    let candidates = enumerate_spans(word_reprs.rows(), params.k_max(), gold);
    span_loss_over(word_reprs, &candidates, params, cfg)
}

//! Named finite-difference gradient suites covering every differentiable
//! operation plus the composed losses (attention pooling, focal span loss,
//! and the CRF objective end to end through the encoder).
//!
//! Each suite re-checks the analytic gradient at [`SUITE_POINTS`] random
//! parameter points; the reported number is the worst relative error seen.

use crate::autodiff::{finite_diff_check, Tensor};
use crate::corpus::Span;
use crate::crf::{crf_nll, TagSet};
use crate::encoder::{
    attention_pool, encode_sentence, EncoderParams, PoolingParams, SubwordVocab,
};
use crate::error::Result;
use crate::rng::{rng_from_seed, uniform_in, Rng};
use crate::span_head::{span_loss, FocalConfig, SpanHeadParams};

/// Random points checked per suite.
pub const SUITE_POINTS: usize = 10;

/// Relative-error tolerance the suites are expected to meet.
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn rand_values(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform_in(rng, lo, hi)).collect()
}

fn p(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::param("p", rows, cols, rand_values(rng, rows * cols, lo, hi))
}

/// Worst relative error of `build` over [`SUITE_POINTS`] random points.
fn sweep<F, G>(rng: &mut Rng, make_params: F, build: G) -> Result<f64>
where
    F: Fn(&mut Rng) -> Vec<Tensor>,
    G: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut worst = 0.0f64;
    for _ in 0..SUITE_POINTS {
        let params = make_params(rng);
        let report = finite_diff_check(&params, || build(&params), 1e-5)?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(worst)
}

/// Runs every suite with the given seed and returns one result per suite.
/// Callers decide what tolerance to enforce; [`SUITE_TOLERANCE`] is the
/// advertised bound.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = rng_from_seed(seed);
    let mut out: Vec<SuiteResult> = Vec::new();
    let mut push = |name: &'static str, err: f64| out.push(SuiteResult { name, max_rel_err: err });

    // Elementwise and structural ops, each reduced to a scalar loss. The
    // tanh in most losses keeps the downstream gradient non-constant so a
    // wrong op gradient cannot hide behind a uniform upstream factor.
    push(
        "add",
        sweep(
            &mut rng,
            |r| vec![p(r, 3, 4, -1.0, 1.0), p(r, 3, 4, -1.0, 1.0)],
            |t| Ok(t[0].add(&t[1])?.tanh().sum()),
        )?,
    );
    push(
        "add_rowwise",
        sweep(
            &mut rng,
            |r| vec![p(r, 3, 4, -1.0, 1.0), p(r, 1, 4, -1.0, 1.0)],
            |t| Ok(t[0].add_rowwise(&t[1])?.tanh().sum()),
        )?,
    );
    push(
        "add_colwise",
        sweep(
            &mut rng,
            |r| vec![p(r, 3, 4, -1.0, 1.0), p(r, 3, 1, -1.0, 1.0)],
            |t| Ok(t[0].add_colwise(&t[1])?.tanh().sum()),
        )?,
    );
    push(
        "mul",
        sweep(
            &mut rng,
            |r| vec![p(r, 3, 4, -1.0, 1.0), p(r, 3, 4, -1.0, 1.0)],
            |t| Ok(t[0].mul(&t[1])?.tanh().sum()),
        )?,
    );
    push(
        "matmul",
        sweep(
            &mut rng,
            |r| vec![p(r, 3, 4, -1.0, 1.0), p(r, 4, 2, -1.0, 1.0)],
            |t| Ok(t[0].matmul(&t[1])?.tanh().sum()),
        )?,
    );
    push(
        "scale",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].scale(1.7).tanh().sum()))?,
    );
    push(
        "neg",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].neg().tanh().sum()))?,
    );
    push("tanh", sweep(&mut rng, |r| vec![p(r, 3, 4, -2.0, 2.0)], |t| Ok(t[0].tanh().sum()))?);
    push("exp", sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].exp().sum()))?);
    push("log", sweep(&mut rng, |r| vec![p(r, 3, 4, 0.5, 2.0)], |t| Ok(t[0].log().sum()))?);
    push(
        "powf",
        sweep(&mut rng, |r| vec![p(r, 3, 4, 0.5, 2.0)], |t| Ok(t[0].powf(1.3).sum()))?,
    );
    push(
        "sum",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].mul(&t[0])?.sum()))?,
    );
    push(
        "mean",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].mul(&t[0])?.mean()))?,
    );
    push(
        "reshape",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| Ok(t[0].reshape(2, 6)?.tanh().sum()))?,
    );
    push(
        "slice_rows",
        sweep(&mut rng, |r| vec![p(r, 4, 3, -1.0, 1.0)], |t| {
            Ok(t[0].slice_rows(1, 2)?.tanh().sum())
        })?,
    );
    push(
        "gather_rows",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| {
            Ok(t[0].gather_rows(&[2, 0, 2, 1])?.tanh().sum())
        })?,
    );
    push(
        "gather_flat",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -1.0, 1.0)], |t| {
            Ok(t[0].gather_flat(&[0, 5, 11, 5])?.tanh().sum())
        })?,
    );
    push(
        "concat_rows",
        sweep(
            &mut rng,
            |r| vec![p(r, 2, 3, -1.0, 1.0), p(r, 1, 3, -1.0, 1.0)],
            |t| Ok(Tensor::concat_rows(&[&t[0], &t[1]])?.tanh().sum()),
        )?,
    );
    push(
        "concat_cols",
        sweep(
            &mut rng,
            |r| vec![p(r, 2, 2, -1.0, 1.0), p(r, 2, 3, -1.0, 1.0)],
            |t| Ok(Tensor::concat_cols(&[&t[0], &t[1]])?.tanh().sum()),
        )?,
    );
    push(
        "masked_softmax",
        sweep(
            &mut rng,
            |r| vec![p(r, 2, 5, -2.0, 2.0), p(r, 2, 5, -1.0, 1.0)],
            |t| {
                let sm = t[0].masked_softmax(&[true, true, false, true, false])?;
                Ok(sm.mul(&t[1])?.sum())
            },
        )?,
    );
    push(
        "log_sum_exp_cols",
        sweep(&mut rng, |r| vec![p(r, 3, 4, -2.0, 2.0)], |t| {
            Ok(t[0].log_sum_exp_cols().tanh().sum())
        })?,
    );
    push(
        "focal_from_logits",
        sweep(&mut rng, |r| vec![p(r, 1, 2, -2.0, 2.0)], |t| t[0].focal_from_logits(1, 0.7, 0.3))?,
    );

    // Attention pooling with a masked position; the pooled matrix h is a
    // parameter too so the gradient into the values is covered, not just
    // the gradient into the scoring weights.
    push(
        "attention_pool",
        sweep(
            &mut rng,
            |r| vec![p(r, 4, 3, -1.0, 1.0), p(r, 3, 1, -1.0, 1.0), p(r, 4, 4, -1.0, 1.0)],
            |t| {
                let params = PoolingParams { w_a: t[1].clone(), w_alpha: t[2].clone() };
                let pooled = attention_pool(&t[0], &[true, true, true, false], &params)?;
                Ok(pooled.tanh().sum())
            },
        )?,
    );

    // Focal span loss over all enumerated candidates of a 4-word sentence.
    push(
        "span_loss",
        sweep(
            &mut rng,
            |r| {
                vec![
                    p(r, 4, 3, -1.0, 1.0), // word representations
                    p(r, 3, 1, -1.0, 1.0),
                    p(r, 2, 2, -1.0, 1.0),
                    p(r, 3, 3, -1.0, 1.0),
                    p(r, 1, 3, -0.3, 0.3),
                    p(r, 3, 2, -1.0, 1.0),
                    p(r, 1, 2, -0.3, 0.3),
                ]
            },
            |t| {
                let head = SpanHeadParams {
                    pool: PoolingParams { w_a: t[1].clone(), w_alpha: t[2].clone() },
                    ffn_w1: t[3].clone(),
                    ffn_b1: t[4].clone(),
                    ffn_w2: t[5].clone(),
                    ffn_b2: t[6].clone(),
                    evals: Default::default(),
                };
                let gold = vec![Span::new(1, 2, "X")];
                let cfg = FocalConfig { gamma: 0.5, alpha: (0.3, 0.7) };
                span_loss(&t[0], &gold, &head, &cfg)
            },
        )?,
    );

    // CRF negative log-likelihood through the whole encoder: subword
    // embeddings, word pooling, context FFN, emission projection, CRF.
    let vocab = SubwordVocab::from_entries(
        ["<pad>", "<unk>", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
    )?;
    let tags = TagSet::from_classes(["X"]);
    let d = 4;
    let m = tags.len();
    push(
        "crf_nll_through_encoder",
        sweep(
            &mut rng,
            |r| {
                vec![
                    p(r, 6, d, -0.8, 0.8),     // embed
                    p(r, d, 1, -0.8, 0.8),     // word_wa
                    p(r, 3, 3, -0.8, 0.8),     // word_walpha (k_sub 3)
                    p(r, 3 * d, d, -0.5, 0.5), // ctx_w1 (window 1)
                    p(r, 1, d, -0.3, 0.3),     // ctx_b1
                    p(r, d, d, -0.5, 0.5),     // ctx_w2
                    p(r, 1, d, -0.3, 0.3),     // ctx_b2
                    p(r, d, m, -0.8, 0.8),     // emit_w
                    p(r, 1, m, -0.3, 0.3),     // emit_b
                    p(r, m, m, -0.5, 0.5),     // trans
                    p(r, 1, m, -0.5, 0.5),     // start
                    p(r, 1, m, -0.5, 0.5),     // end
                ]
            },
            |t| {
                let enc = EncoderParams {
                    embed: t[0].clone(),
                    word_pool: PoolingParams { w_a: t[1].clone(), w_alpha: t[2].clone() },
                    ctx_w1: t[3].clone(),
                    ctx_b1: t[4].clone(),
                    ctx_w2: t[5].clone(),
                    ctx_b2: t[6].clone(),
                    window: 1,
                    k_sub: 3,
                };
                let h = encode_sentence(&["ab", "cad", "db"], &vocab, &enc)?;
                let emissions = h.matmul(&t[7])?.add_rowwise(&t[8])?;
                crf_nll(&emissions, &t[9], &t[10], &t[11], &[1, 2, 0])
            },
        )?,
    );

    Ok(out)
}

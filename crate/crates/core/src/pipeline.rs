//! Orchestration: model initialization, multi-task training (CRF NLL plus
//! weighted span focal loss), prediction, and one-round self-training.

use std::time::Instant;

use crate::autodiff::{Adam, AdamConfig, Tensor};
use crate::corpus::{
    enumerate_spans, parse_tag, spans_from_labels, validate_and_repair_iob, Corpus, Sentence,
    Span, Tag, TokenRow,
};
use crate::crf::{crf_nll, forward_log_partition, viterbi, TagSet};
use crate::encoder::{encode_sentence, EncoderParams, PoolingParams, SubwordVocab};
use crate::error::{Error, Result};
use crate::evaluator;
use crate::rng::{rng_from_seed, shuffle, xavier_uniform};
use crate::span_head::{span_loss, FocalConfig, SpanHeadParams};

/// XOR'd into the seed for the epoch-shuffle stream so it never replays the
/// initialization draws.
const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6573;

/// Floor for computed focal alphas; keeps degenerate corpora (no entities at
/// all, or nothing but entities) from producing a zero class weight.
const ALPHA_FLOOR: f64 = 1e-6;

/// The paper-reported learning rate for the large pretrained encoder. Not
/// the default here: the toy encoder trains far too slowly under it.
pub const PRETRAINED_PRESET_LR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Representation width d.
    pub d: usize,
    /// Context window w; each word sees 2w+1 pooled vectors.
    pub window: usize,
    /// Maximum span width considered by the span head.
    pub k_max: usize,
    /// Fixed subword count per word for pooling.
    pub k_sub: usize,
    pub vocab_size: usize,
    /// Span-loss weight lambda; 0 disables the span objective.
    pub lambda: f64,
    /// Focal exponent gamma.
    pub gamma: f64,
    /// Focal class weights (negative, positive); None computes inverse
    /// prevalence from the training split.
    pub alpha: Option<(f64, f64)>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub constrained_decode: bool,
    /// Minimum per-token log-probability for a weakly labeled sentence to be
    /// kept during self-training.
    pub confidence_threshold: Option<f64>,
    /// Fraction of training sentences held out (from the end) for per-epoch
    /// dev F1 reporting.
    pub dev_fraction: f64,
    /// Return the parameters from the best dev-F1 epoch instead of the last.
    pub select_best_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            d: 32,
            window: 1,
            k_max: 8,
            k_sub: 12,
            vocab_size: 512,
            lambda: 1.0,
            gamma: 0.5,
            alpha: None,
            lr: 1e-3,
            batch_size: 16,
            epochs: 20,
            constrained_decode: true,
            confidence_threshold: None,
            dev_fraction: 0.1,
            select_best_dev: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.k_max == 0 || self.k_sub == 0 {
            return bad(format!(
                "d, k_max, k_sub must all be >= 1, got {}, {}, {}",
                self.d, self.k_max, self.k_sub
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if let Some((a0, a1)) = self.alpha {
            if !(a0 > 0.0 && a1 > 0.0 && a0.is_finite() && a1.is_finite()) {
                return bad(format!("alpha components must be finite and > 0, got ({a0}, {a1})"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".to_string());
        }
        if self.epochs == 0 {
            return bad("epoch count must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad(format!("dev fraction must be in [0, 1), got {}", self.dev_fraction));
        }
        if self.confidence_threshold.is_some_and(|t| t.is_nan()) {
            return bad("confidence threshold must not be NaN".to_string());
        }
        Ok(())
    }
}

/// One parameter matrix as plain data. The model stays `Send + Sync`; graph
/// tensors are built per use.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamData {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ParamData {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> ParamData {
        assert_eq!(rows * cols, values.len(), "parameter value count");
        ParamData { rows, cols, values }
    }

    pub fn zeros(rows: usize, cols: usize) -> ParamData {
        ParamData { rows, cols, values: vec![0.0; rows * cols] }
    }

    fn tensor(&self, name: &'static str, tracked: bool) -> Tensor {
        if tracked {
            Tensor::param(name, self.rows, self.cols, self.values.clone())
        } else {
            Tensor::constant(self.rows, self.cols, self.values.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanParamsData {
    pub pool_wa: ParamData,
    pub pool_walpha: ParamData,
    pub ffn_w1: ParamData,
    pub ffn_b1: ParamData,
    pub ffn_w2: ParamData,
    pub ffn_b2: ParamData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: ParamData,
    pub word_wa: ParamData,
    pub word_walpha: ParamData,
    pub ctx_w1: ParamData,
    pub ctx_b1: ParamData,
    pub ctx_w2: ParamData,
    pub ctx_b2: ParamData,
    /// Absent after the self-training retrain.
    pub span: Option<SpanParamsData>,
    pub emit_w: ParamData,
    pub emit_b: ParamData,
    pub trans: ParamData,
    pub start: ParamData,
    pub end: ParamData,
}

impl ModelParams {
    /// Parameters in the canonical order used by the optimizer, the graph,
    /// and the container format.
    pub fn ordered(&self) -> Vec<(&'static str, &ParamData)> {
        let mut out = vec![
            ("embed", &self.embed),
            ("word_wa", &self.word_wa),
            ("word_walpha", &self.word_walpha),
            ("ctx_w1", &self.ctx_w1),
            ("ctx_b1", &self.ctx_b1),
            ("ctx_w2", &self.ctx_w2),
            ("ctx_b2", &self.ctx_b2),
        ];
        if let Some(span) = &self.span {
            out.extend([
                ("span_pool_wa", &span.pool_wa),
                ("span_pool_walpha", &span.pool_walpha),
                ("span_ffn_w1", &span.ffn_w1),
                ("span_ffn_b1", &span.ffn_b1),
                ("span_ffn_w2", &span.ffn_w2),
                ("span_ffn_b2", &span.ffn_b2),
            ]);
        }
        out.extend([
            ("emit_w", &self.emit_w),
            ("emit_b", &self.emit_b),
            ("trans", &self.trans),
            ("start", &self.start),
            ("end", &self.end),
        ]);
        out
    }

    fn ordered_mut(&mut self) -> Vec<&mut ParamData> {
        let mut out = vec![
            &mut self.embed,
            &mut self.word_wa,
            &mut self.word_walpha,
            &mut self.ctx_w1,
            &mut self.ctx_b1,
            &mut self.ctx_w2,
            &mut self.ctx_b2,
        ];
        if let Some(span) = &mut self.span {
            out.extend([
                &mut span.pool_wa,
                &mut span.pool_walpha,
                &mut span.ffn_w1,
                &mut span.ffn_b1,
                &mut span.ffn_w2,
                &mut span.ffn_b2,
            ]);
        }
        out.extend([
            &mut self.emit_w,
            &mut self.emit_b,
            &mut self.trans,
            &mut self.start,
            &mut self.end,
        ]);
        out
    }
}

/// A trained (or initialized) model as plain data.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: SubwordVocab,
    pub tags: TagSet,
    pub cfg: TrainConfig,
    pub params: ModelParams,
}

/// Tensor view of a model: tracked for training, untracked for decoding.
pub struct ModelGraph {
    pub encoder: EncoderParams,
    pub span: Option<SpanHeadParams>,
    pub emit_w: Tensor,
    pub emit_b: Tensor,
    pub trans: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

impl ModelGraph {
    /// Trainable tensors in the canonical parameter order.
    pub fn trainables(&self) -> Vec<Tensor> {
        let mut out = vec![
            self.encoder.embed.clone(),
            self.encoder.word_pool.w_a.clone(),
            self.encoder.word_pool.w_alpha.clone(),
            self.encoder.ctx_w1.clone(),
            self.encoder.ctx_b1.clone(),
            self.encoder.ctx_w2.clone(),
            self.encoder.ctx_b2.clone(),
        ];
        if let Some(span) = &self.span {
            out.extend([
                span.pool.w_a.clone(),
                span.pool.w_alpha.clone(),
                span.ffn_w1.clone(),
                span.ffn_b1.clone(),
                span.ffn_w2.clone(),
                span.ffn_b2.clone(),
            ]);
        }
        out.extend([
            self.emit_w.clone(),
            self.emit_b.clone(),
            self.trans.clone(),
            self.start.clone(),
            self.end.clone(),
        ]);
        out
    }

    pub fn span_eval_count(&self) -> u64 {
        self.span.as_ref().map_or(0, |s| s.eval_count())
    }

    /// Untracked copy of the current values, for decoding mid-training. The
    /// span head is dropped: decoding never consults it.
    fn frozen_copy(&self) -> ModelGraph {
        let freeze = |t: &Tensor| Tensor::constant(t.rows(), t.cols(), t.values());
        ModelGraph {
            encoder: EncoderParams {
                embed: freeze(&self.encoder.embed),
                word_pool: PoolingParams {
                    w_a: freeze(&self.encoder.word_pool.w_a),
                    w_alpha: freeze(&self.encoder.word_pool.w_alpha),
                },
                ctx_w1: freeze(&self.encoder.ctx_w1),
                ctx_b1: freeze(&self.encoder.ctx_b1),
                ctx_w2: freeze(&self.encoder.ctx_w2),
                ctx_b2: freeze(&self.encoder.ctx_b2),
                window: self.encoder.window,
                k_sub: self.encoder.k_sub,
            },
            span: None,
            emit_w: freeze(&self.emit_w),
            emit_b: freeze(&self.emit_b),
            trans: freeze(&self.trans),
            start: freeze(&self.start),
            end: freeze(&self.end),
        }
    }
}

impl Model {
    pub fn to_graph(&self, tracked: bool) -> ModelGraph {
        let p = &self.params;
        ModelGraph {
            encoder: EncoderParams {
                embed: p.embed.tensor("embed", tracked),
                word_pool: PoolingParams {
                    w_a: p.word_wa.tensor("word_wa", tracked),
                    w_alpha: p.word_walpha.tensor("word_walpha", tracked),
                },
                ctx_w1: p.ctx_w1.tensor("ctx_w1", tracked),
                ctx_b1: p.ctx_b1.tensor("ctx_b1", tracked),
                ctx_w2: p.ctx_w2.tensor("ctx_w2", tracked),
                ctx_b2: p.ctx_b2.tensor("ctx_b2", tracked),
                window: self.cfg.window,
                k_sub: self.cfg.k_sub,
            },
            span: p.span.as_ref().map(|s| SpanHeadParams {
                pool: PoolingParams {
                    w_a: s.pool_wa.tensor("span_pool_wa", tracked),
                    w_alpha: s.pool_walpha.tensor("span_pool_walpha", tracked),
                },
                ffn_w1: s.ffn_w1.tensor("span_ffn_w1", tracked),
                ffn_b1: s.ffn_b1.tensor("span_ffn_b1", tracked),
                ffn_w2: s.ffn_w2.tensor("span_ffn_w2", tracked),
                ffn_b2: s.ffn_b2.tensor("span_ffn_b2", tracked),
                evals: Default::default(),
            }),
            emit_w: p.emit_w.tensor("emit_w", tracked),
            emit_b: p.emit_b.tensor("emit_b", tracked),
            trans: p.trans.tensor("trans", tracked),
            start: p.start.tensor("start", tracked),
            end: p.end.tensor("end", tracked),
        }
    }

    /// Copies current graph values back into the plain-data parameters. The
    /// graph must have been built by `to_graph` on a model of this shape.
    pub fn absorb(&mut self, graph: &ModelGraph) {
        let tensors = graph.trainables();
        let mut slots = self.params.ordered_mut();
        assert_eq!(tensors.len(), slots.len(), "model/graph shape mismatch");
        for (slot, tensor) in slots.iter_mut().zip(&tensors) {
            assert_eq!(slot.rows, tensor.rows());
            assert_eq!(slot.cols, tensor.cols());
            slot.values = tensor.values();
        }
    }

    pub fn has_span_head(&self) -> bool {
        self.params.span.is_some()
    }
}

/// Fresh model with the span head; parameters drawn from `cfg.seed`.
pub fn init_model(classes: &[String], corpus: &Corpus, cfg: &TrainConfig) -> Result<Model> {
    init_model_inner(classes, corpus, cfg, true)
}

/// Fresh model without the span head (the self-training retrain shape).
pub fn init_model_without_span_head(
    classes: &[String],
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<Model> {
    init_model_inner(classes, corpus, cfg, false)
}

fn init_model_inner(
    classes: &[String],
    corpus: &Corpus,
    cfg: &TrainConfig,
    with_span: bool,
) -> Result<Model> {
    cfg.validate()?;
    if corpus.sentences.is_empty() {
        return Err(Error::Config("cannot initialize a model from an empty corpus".to_string()));
    }
    let vocab = SubwordVocab::build(corpus, cfg.vocab_size)?;
    let tags = TagSet::from_classes(classes.iter().cloned());

    let mut rng = rng_from_seed(cfg.seed);
    let (v, d, m) = (vocab.len(), cfg.d, tags.len());
    let (ks, km) = (cfg.k_sub, cfg.k_max);
    let cw = (2 * cfg.window + 1) * d;
    // Embeddings use fan (d, d): fan-in of the vocabulary size would shrink
    // rows toward zero for large vocabularies.
    let embed = ParamData::new(v, d, xavier_uniform(&mut rng, d, d, v * d));
    let word_wa = ParamData::new(d, 1, xavier_uniform(&mut rng, d, 1, d));
    let word_walpha = ParamData::new(ks, ks, xavier_uniform(&mut rng, ks, ks, ks * ks));
    let ctx_w1 = ParamData::new(cw, d, xavier_uniform(&mut rng, cw, d, cw * d));
    let ctx_b1 = ParamData::zeros(1, d);
    let ctx_w2 = ParamData::new(d, d, xavier_uniform(&mut rng, d, d, d * d));
    let ctx_b2 = ParamData::zeros(1, d);
    let span = if with_span {
        Some(SpanParamsData {
            pool_wa: ParamData::new(d, 1, xavier_uniform(&mut rng, d, 1, d)),
            pool_walpha: ParamData::new(km, km, xavier_uniform(&mut rng, km, km, km * km)),
            ffn_w1: ParamData::new(d, d, xavier_uniform(&mut rng, d, d, d * d)),
            ffn_b1: ParamData::zeros(1, d),
            ffn_w2: ParamData::new(d, 2, xavier_uniform(&mut rng, d, 2, d * 2)),
            ffn_b2: ParamData::zeros(1, 2),
        })
    } else {
        None
    };
    let emit_w = ParamData::new(d, m, xavier_uniform(&mut rng, d, m, d * m));

    Ok(Model {
        vocab,
        tags,
        cfg: cfg.clone(),
        params: ModelParams {
            embed,
            word_wa,
            word_walpha,
            ctx_w1,
            ctx_b1,
            ctx_w2,
            ctx_b2,
            span,
            emit_w,
            emit_b: ParamData::zeros(1, m),
            trans: ParamData::zeros(m, m),
            start: ParamData::zeros(1, m),
            end: ParamData::zeros(1, m),
        },
    })
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean CRF NLL per sentence over the epoch.
    pub crf_loss: f64,
    /// Mean span focal loss per sentence (0 when the span objective is off).
    pub span_loss: f64,
    /// Mean combined objective per sentence.
    pub total_loss: f64,
    pub dev_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    /// Focal alphas actually used; None when the span objective was off.
    pub alpha: Option<(f64, f64)>,
    pub dev_sentences: usize,
    /// Set when `select_best_dev` picked a non-final epoch's parameters.
    pub best_epoch: Option<usize>,
    /// Span head evaluations performed during this run.
    pub span_evals: u64,
}

impl TrainHistory {
    /// One structured record per epoch.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let dev = e.dev_f1.map_or("none".to_string(), |f| f.to_string());
            out.push_str(&format!(
                "epoch={} crf={} span={} total={} dev_f1={} seconds={:.3}\n",
                e.epoch, e.crf_loss, e.span_loss, e.total_loss, dev, e.seconds
            ));
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        if let Some((a0, a1)) = self.alpha {
            out.push_str(&format!("focal alpha: negative {a0:.6}, positive {a1:.6}\n"));
        }
        for e in &self.epochs {
            let dev = e.dev_f1.map_or("   -  ".to_string(), |f| format!("{:.4}", f));
            out.push_str(&format!(
                "epoch {:>3}  crf {:>9.4}  span {:>9.4}  total {:>9.4}  dev_f1 {}  {:.2}s\n",
                e.epoch, e.crf_loss, e.span_loss, e.total_loss, dev, e.seconds
            ));
        }
        if let Some(best) = self.best_epoch {
            out.push_str(&format!("kept parameters from epoch {best} (best dev F1)\n"));
        }
        out
    }
}

struct PreparedSentence {
    surfaces: Vec<String>,
    tag_indices: Vec<usize>,
    gold_spans: Vec<Span>,
}

/// Trains `model` on `data`. Returns the trained model (final epoch, or best
/// dev epoch when configured) and the per-epoch history.
pub fn train(model: &Model, data: &Corpus, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if cfg.lambda > 0.0 && !model.has_span_head() {
        return Err(Error::Config(
            "lambda > 0 but the model has no span head; train with lambda = 0".to_string(),
        ));
    }

    // Unknown entity classes fail before any optimization work.
    for sentence in &data.sentences {
        for row in &sentence.rows {
            if let Tag::Entity { class, .. } = parse_tag(&row.label)? {
                if model.tags.classes().binary_search(&class.to_string()).is_err() {
                    return Err(Error::InvalidTag {
                        tag: row.label.clone(),
                        msg: format!("class `{class}` unknown to the model (sentence {})", sentence.id),
                    });
                }
            }
        }
    }

    let mut warnings = Vec::new();
    let mut repaired = data.clone();
    for sentence in &mut repaired.sentences {
        let (fixed, violations) = validate_and_repair_iob(&sentence.labels())?;
        for v in &violations {
            warnings.push(format!(
                "sentence {}: token {} label {} repaired to {}",
                sentence.id, v.index, v.found, v.repaired_to
            ));
        }
        for (row, label) in sentence.rows.iter_mut().zip(fixed) {
            row.label = label;
        }
    }

    let n = repaired.sentences.len();
    let dev_n = (n as f64 * cfg.dev_fraction).floor() as usize;
    let train_n = n - dev_n;
    if train_n == 0 {
        return Err(Error::Config("no training sentences left after the dev split".to_string()));
    }
    let (train_sents, dev_sents) = repaired.sentences.split_at(train_n);

    let mut prepared = Vec::with_capacity(train_n);
    for sentence in train_sents {
        let labels = sentence.labels();
        prepared.push(PreparedSentence {
            surfaces: sentence.surfaces().map(|s| s.to_string()).collect(),
            tag_indices: model.tags.indices_of(&labels)?,
            gold_spans: spans_from_labels(&labels)?,
        });
    }

    let span_active = cfg.lambda > 0.0 && model.has_span_head();
    let focal = if span_active {
        let alpha = cfg.alpha.unwrap_or_else(|| {
            let (mut pos, mut total) = (0u64, 0u64);
            for p in &prepared {
                for (_, positive) in enumerate_spans(p.surfaces.len(), cfg.k_max, &p.gold_spans) {
                    pos += positive as u64;
                    total += 1;
                }
            }
            let pos_frac = pos as f64 / total as f64;
            (pos_frac.max(ALPHA_FLOOR), (1.0 - pos_frac).max(ALPHA_FLOOR))
        });
        let focal = FocalConfig { gamma: cfg.gamma, alpha };
        focal.validate()?;
        Some(focal)
    } else {
        None
    };

    let graph = model.to_graph(true);
    let params = graph.trainables();
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &params);
    let mut order_rng = rng_from_seed(cfg.seed ^ SHUFFLE_STREAM);

    let mut history = TrainHistory {
        warnings,
        alpha: focal.as_ref().map(|f| f.alpha),
        dev_sentences: dev_n,
        ..TrainHistory::default()
    };
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_n).collect();
        shuffle(&mut order_rng, &mut order);

        let (mut crf_sum, mut span_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            for p in &params {
                p.zero_grad();
            }
            let mut crf_terms = Vec::with_capacity(chunk.len());
            let mut span_terms = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &prepared[i];
                let surfaces: Vec<&str> = p.surfaces.iter().map(|s| s.as_str()).collect();
                let h = encode_sentence(&surfaces, &model.vocab, &graph.encoder)?;
                let emissions = h.matmul(&graph.emit_w)?.add_rowwise(&graph.emit_b)?;
                crf_terms.push(crf_nll(
                    &emissions,
                    &graph.trans,
                    &graph.start,
                    &graph.end,
                    &p.tag_indices,
                )?);
                if let Some(focal) = &focal {
                    let head = graph.span.as_ref().expect("span_active implies head");
                    span_terms.push(span_loss(&h, &p.gold_spans, head, focal)?);
                }
            }
            let bs = chunk.len() as f64;
            let crf_batch = mean_of(&crf_terms)?;
            let (total_batch, span_value) = match focal {
                Some(_) => {
                    let span_batch = mean_of(&span_terms)?;
                    let total = crf_batch.add(&span_batch.scale(cfg.lambda))?;
                    (total, span_batch.scalar())
                }
                None => (crf_batch.clone(), 0.0),
            };
            crf_sum += crf_batch.scalar() * bs;
            span_sum += span_value * bs;
            total_sum += total_batch.scalar() * bs;
            total_batch.backward()?;
            adam.step(&params);
        }

        let dev_f1 = if dev_sents.is_empty() {
            None
        } else {
            let frozen = graph.frozen_copy();
            let mut pred = Vec::with_capacity(dev_sents.len());
            for s in dev_sents {
                pred.push(decode_sentence(&model.vocab, &frozen, &model.tags, cfg.constrained_decode, s)?);
            }
            let gold = Corpus::from_sentences(dev_sents.to_vec())?;
            let pred = Corpus::from_sentences(pred)?;
            Some(evaluator::score(&gold, &pred)?.micro.f1)
        };

        if cfg.select_best_dev {
            if let Some(f1) = dev_f1 {
                if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                    best = Some((f1, epoch, params.iter().map(|p| p.values()).collect()));
                }
            }
        }

        let n_train = train_n as f64;
        history.epochs.push(EpochRecord {
            epoch,
            crf_loss: crf_sum / n_train,
            span_loss: span_sum / n_train,
            total_loss: total_sum / n_train,
            dev_f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    if let Some((_, epoch, values)) = best {
        for (p, v) in params.iter().zip(&values) {
            p.set_values(v);
        }
        history.best_epoch = Some(epoch);
    }
    history.span_evals = graph.span_eval_count();

    let mut out = model.clone();
    out.cfg = cfg.clone();
    out.absorb(&graph);
    Ok((out, history))
}

fn mean_of(terms: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = terms.iter().collect();
    Ok(Tensor::concat_rows(&refs)?.mean())
}

fn emissions_for(vocab: &SubwordVocab, graph: &ModelGraph, sentence: &Sentence) -> Result<Tensor> {
    let surfaces: Vec<&str> = sentence.rows.iter().map(|r| r.surface.as_str()).collect();
    let h = encode_sentence(&surfaces, vocab, &graph.encoder)?;
    h.matmul(&graph.emit_w)?.add_rowwise(&graph.emit_b)
}

fn relabel(sentence: &Sentence, labels: Vec<String>) -> Sentence {
    let rows = sentence
        .rows
        .iter()
        .zip(labels)
        .map(|(r, label)| TokenRow { surface: r.surface.clone(), label })
        .collect();
    Sentence { id: sentence.id.clone(), rows }
}

fn decode_sentence(
    vocab: &SubwordVocab,
    graph: &ModelGraph,
    tags: &TagSet,
    constrained: bool,
    sentence: &Sentence,
) -> Result<Sentence> {
    let emissions = emissions_for(vocab, graph, sentence)?;
    let (indices, _) = viterbi(
        &emissions,
        &graph.trans,
        &graph.start,
        &graph.end,
        constrained.then_some(tags),
    )?;
    Ok(relabel(sentence, tags.labels_of(&indices)))
}

/// Decode plus length-normalized log-probability of the decoded path:
/// (viterbi score - log Z) / length.
fn decode_sentence_scored(
    vocab: &SubwordVocab,
    graph: &ModelGraph,
    tags: &TagSet,
    constrained: bool,
    sentence: &Sentence,
) -> Result<(Sentence, f64)> {
    let emissions = emissions_for(vocab, graph, sentence)?;
    let (indices, score) = viterbi(
        &emissions,
        &graph.trans,
        &graph.start,
        &graph.end,
        constrained.then_some(tags),
    )?;
    let log_z = forward_log_partition(&emissions, &graph.trans, &graph.start, &graph.end)?.scalar();
    let confidence = (score - log_z) / sentence.rows.len() as f64;
    Ok((relabel(sentence, tags.labels_of(&indices)), confidence))
}

/// Labels every sentence with constrained Viterbi (per the model's config).
/// Sentences decode independently; output order matches input order.
#[cfg(feature = "parallel")]
pub fn predict(model: &Model, corpus: &Corpus) -> Result<Corpus> {
    use rayon::prelude::*;
    // min_len caps the number of splits so the per-split graph copy done by
    // map_init stays amortized over a batch of sentences.
    let sentences = corpus
        .sentences
        .par_iter()
        .with_min_len(16)
        .map_init(
            || model.to_graph(false),
            |graph, s| decode_sentence(&model.vocab, graph, &model.tags, model.cfg.constrained_decode, s),
        )
        .collect::<Result<Vec<Sentence>>>()?;
    Corpus::from_sentences(sentences)
}

#[cfg(not(feature = "parallel"))]
pub fn predict(model: &Model, corpus: &Corpus) -> Result<Corpus> {
    predict_sequential(model, corpus)
}

/// Single-threaded decode; always available for comparison benchmarks.
pub fn predict_sequential(model: &Model, corpus: &Corpus) -> Result<Corpus> {
    let graph = model.to_graph(false);
    let mut sentences = Vec::with_capacity(corpus.sentences.len());
    for s in &corpus.sentences {
        sentences.push(decode_sentence(
            &model.vocab,
            &graph,
            &model.tags,
            model.cfg.constrained_decode,
            s,
        )?);
    }
    Corpus::from_sentences(sentences)
}

/// Decode plus per-sentence confidence (length-normalized log-probability of
/// the decoded path; <= 0, with 0 meaning the path carries all probability).
pub fn predict_with_confidence(model: &Model, corpus: &Corpus) -> Result<(Corpus, Vec<f64>)> {
    let graph = model.to_graph(false);
    let mut sentences = Vec::with_capacity(corpus.sentences.len());
    let mut confidences = Vec::with_capacity(corpus.sentences.len());
    for s in &corpus.sentences {
        let (labeled, confidence) = decode_sentence_scored(
            &model.vocab,
            &graph,
            &model.tags,
            model.cfg.constrained_decode,
            s,
        )?;
        sentences.push(labeled);
        confidences.push(confidence);
    }
    Ok((Corpus::from_sentences(sentences)?, confidences))
}

#[derive(Debug)]
pub struct SelfTrainOutcome {
    pub stage1: Model,
    pub stage1_history: TrainHistory,
    /// Weakly labeled unlabeled set (after any confidence filtering).
    pub weak: Corpus,
    /// Sentences removed by the confidence filter.
    pub dropped: usize,
    pub stage2: Model,
    pub stage2_history: TrainHistory,
    pub warnings: Vec<String>,
}

impl SelfTrainOutcome {
    /// Span head evaluations during the retrain; the stage-2 objective must
    /// never touch the head, so this is 0 on every valid run.
    pub fn stage2_span_evals(&self) -> u64 {
        self.stage2_history.span_evals
    }
}

/// One round of self-training: train on `labeled`, weakly label `unlabeled`,
/// then retrain from scratch (seed+1) on the concatenation with the span
/// objective removed.
pub fn self_train(labeled: &Corpus, unlabeled: &Corpus, cfg: &TrainConfig) -> Result<SelfTrainOutcome> {
    let classes: Vec<String> = labeled.label_classes.iter().cloned().collect();
    let initial = init_model(&classes, labeled, cfg)?;
    let (stage1, stage1_history) = train(&initial, labeled, cfg)?;

    let mut warnings = Vec::new();
    let (weak, dropped) = if unlabeled.sentences.is_empty() {
        warnings.push(
            "unlabeled set is empty; the retrain reduces to plain training on the labeled data"
                .to_string(),
        );
        (Corpus::from_sentences(Vec::new())?, 0)
    } else if let Some(threshold) = cfg.confidence_threshold {
        let (pred, confidences) = predict_with_confidence(&stage1, unlabeled)?;
        let total = pred.sentences.len();
        let kept: Vec<Sentence> = pred
            .sentences
            .into_iter()
            .zip(&confidences)
            .filter(|(_, &c)| c >= threshold)
            .map(|(s, _)| s)
            .collect();
        let dropped = total - kept.len();
        if kept.is_empty() {
            warnings.push(format!(
                "confidence filter at {threshold} removed all {total} weak sentences; \
                 the retrain uses the labeled data alone"
            ));
        }
        (Corpus::from_sentences(kept)?, dropped)
    } else {
        (predict(&stage1, unlabeled)?, 0)
    };

    let mut combined_sentences = labeled.sentences.clone();
    combined_sentences.extend(weak.sentences.iter().cloned());
    let combined = Corpus::from_sentences(combined_sentences)?;

    let mut stage2_cfg = cfg.clone();
    stage2_cfg.seed = cfg.seed.wrapping_add(1);
    stage2_cfg.lambda = 0.0;
    let fresh = init_model_without_span_head(&classes, &combined, &stage2_cfg)?;
    let (stage2, stage2_history) = train(&fresh, &combined, &stage2_cfg)?;

    Ok(SelfTrainOutcome {
        stage1,
        stage1_history,
        weak,
        dropped,
        stage2,
        stage2_history,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_valid_iob;

    fn sentence(id: &str, pairs: &[(&str, &str)]) -> Sentence {
        Sentence {
            id: id.to_string(),
            rows: pairs
                .iter()
                .map(|(w, l)| TokenRow { surface: w.to_string(), label: l.to_string() })
                .collect(),
        }
    }

    /// Tiny fully deterministic corpus: "visit <place> now" / "met <person>
    /// yesterday" style sentences with two classes.
    fn toy_corpus(n: usize) -> Corpus {
        let places = ["paris", "rome", "oslo", "lima"];
        let people = ["ada", "alan", "grace", "kurt"];
        let mut sentences = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 {
                sentence(
                    &format!("s{i}"),
                    &[("visit", "O"), (places[i % 4], "B-LOC"), ("now", "O")],
                )
            } else {
                sentence(
                    &format!("s{i}"),
                    &[("met", "O"), (people[i % 4], "B-PER"), ("mith", "I-PER"), ("today", "O")],
                )
            };
            sentences.push(s);
        }
        Corpus::from_sentences(sentences).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 8,
            window: 1,
            k_max: 3,
            k_sub: 6,
            vocab_size: 64,
            batch_size: 4,
            epochs: 3,
            dev_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let corpus = toy_corpus(6);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = small_cfg();
        let a = init_model(&classes, &corpus, &cfg).unwrap();
        let b = init_model(&classes, &corpus, &cfg).unwrap();
        assert_eq!(a, b);

        let other = TrainConfig { seed: 43, ..cfg };
        let c = init_model(&classes, &corpus, &other).unwrap();
        assert_ne!(a.params.embed.values, c.params.embed.values);
    }

    #[test]
    fn six_classes_give_thirteen_tags() {
        let corpus = toy_corpus(4);
        let classes: Vec<String> =
            ["PER", "LOC", "GRP", "CORP", "PROD", "CW"].iter().map(|s| s.to_string()).collect();
        let model = init_model(&classes, &corpus, &small_cfg()).unwrap();
        assert_eq!(model.tags.len(), 13);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty = Corpus::from_sentences(Vec::new()).unwrap();
        let classes = vec!["PER".to_string()];
        assert!(matches!(
            init_model(&classes, &empty, &small_cfg()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_class_fails_before_training() {
        let corpus = toy_corpus(4);
        let classes = vec!["LOC".to_string()];
        let model = init_model(&classes, &corpus, &small_cfg()).unwrap();
        let err = train(&model, &corpus, &small_cfg()).unwrap_err();
        assert!(matches!(err, Error::InvalidTag { .. }));
    }

    #[test]
    fn lambda_zero_leaves_span_parameters_untouched() {
        let corpus = toy_corpus(6);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = TrainConfig { lambda: 0.0, ..small_cfg() };
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let before = model.params.span.clone().unwrap();
        let (trained, history) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(trained.params.span.as_ref().unwrap(), &before);
        assert_eq!(history.span_evals, 0);
        assert!(history.epochs.iter().all(|e| e.span_loss == 0.0));
        // CRF parameters did move.
        assert_ne!(trained.params.trans.values, model.params.trans.values);
    }

    #[test]
    fn loss_decreases_on_one_sentence() {
        let corpus = Corpus::from_sentences(vec![sentence(
            "s0",
            &[("alpha", "O"), ("paris", "B-LOC"), ("beta", "O")],
        )])
        .unwrap();
        let classes = vec!["LOC".to_string()];
        let cfg = TrainConfig { epochs: 5, batch_size: 1, ..small_cfg() };
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (_, history) = train(&model, &corpus, &cfg).unwrap();
        for pair in history.epochs.windows(2) {
            assert!(
                pair[1].total_loss < pair[0].total_loss,
                "epoch {} loss {} did not improve on {}",
                pair[1].epoch,
                pair[1].total_loss,
                pair[0].total_loss
            );
        }
    }

    #[test]
    fn histories_and_models_are_reproducible() {
        let corpus = toy_corpus(8);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = TrainConfig { dev_fraction: 0.25, ..small_cfg() };
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (m1, h1) = train(&model, &corpus, &cfg).unwrap();
        let (m2, h2) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1.epochs.len(), h2.epochs.len());
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.crf_loss, b.crf_loss);
            assert_eq!(a.span_loss, b.span_loss);
            assert_eq!(a.total_loss, b.total_loss);
            assert_eq!(a.dev_f1, b.dev_f1);
        }
    }

    #[test]
    fn recorded_losses_decompose_exactly() {
        let corpus = toy_corpus(8);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = TrainConfig { lambda: 0.7, ..small_cfg() };
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (_, history) = train(&model, &corpus, &cfg).unwrap();
        for e in &history.epochs {
            assert!(
                (e.total_loss - (e.crf_loss + cfg.lambda * e.span_loss)).abs() < 1e-10,
                "epoch {}: {} != {} + {}*{}",
                e.epoch,
                e.total_loss,
                e.crf_loss,
                cfg.lambda,
                e.span_loss
            );
        }
    }

    #[test]
    fn malformed_iob_is_repaired_with_warnings() {
        let mut corpus = toy_corpus(4);
        corpus.sentences[0].rows[2].label = "I-LOC".to_string();
        // row 2 follows B-LOC at row 1, legal; force an orphan instead
        corpus.sentences[0].rows[0].label = "I-PER".to_string();
        let classes: Vec<String> = vec!["LOC".to_string(), "PER".to_string()];
        let cfg = small_cfg();
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (_, history) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(history.warnings.len(), 1);
        assert!(history.warnings[0].contains("I-PER"));
    }

    #[test]
    fn predictions_are_deterministic_and_iob_valid() {
        let corpus = toy_corpus(10);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = small_cfg();
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (trained, _) = train(&model, &corpus, &cfg).unwrap();

        let a = predict(&trained, &corpus).unwrap();
        let b = predict(&trained, &corpus).unwrap();
        assert_eq!(a, b);
        let seq = predict_sequential(&trained, &corpus).unwrap();
        assert_eq!(a, seq);

        for (orig, labeled) in corpus.sentences.iter().zip(&a.sentences) {
            assert!(orig.surfaces().eq(labeled.surfaces()));
            assert!(is_valid_iob(&labeled.labels()).unwrap());
        }
    }

    #[test]
    fn confidence_is_nonpositive_and_bounded() {
        let corpus = toy_corpus(6);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = small_cfg();
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (trained, _) = train(&model, &corpus, &cfg).unwrap();
        let (labeled, confidences) = predict_with_confidence(&trained, &corpus).unwrap();
        assert_eq!(labeled.sentences.len(), confidences.len());
        for &c in &confidences {
            assert!(c <= 1e-12, "confidence {c} above 0");
            assert!(c.is_finite());
        }
    }

    #[test]
    fn self_train_weak_labels_match_plain_prediction() {
        let labeled = toy_corpus(8);
        let unlabeled = toy_corpus(6).stripped();
        let cfg = small_cfg();
        let outcome = self_train(&labeled, &unlabeled, &cfg).unwrap();

        let direct = predict(&outcome.stage1, &unlabeled).unwrap();
        assert_eq!(outcome.weak, direct);
        assert_eq!(outcome.dropped, 0);
        assert!(!outcome.stage2.has_span_head());
        assert_eq!(outcome.stage2_span_evals(), 0);
        assert!(outcome.stage1_history.span_evals > 0);
        assert_eq!(outcome.stage2.cfg.lambda, 0.0);
        assert_eq!(outcome.stage2.cfg.seed, cfg.seed + 1);
        for s in &outcome.weak.sentences {
            assert!(is_valid_iob(&s.labels()).unwrap());
        }
    }

    #[test]
    fn infinite_threshold_empties_the_weak_set() {
        let labeled = toy_corpus(8);
        let unlabeled = toy_corpus(4).stripped();
        let cfg = TrainConfig {
            confidence_threshold: Some(f64::INFINITY),
            ..small_cfg()
        };
        let outcome = self_train(&labeled, &unlabeled, &cfg).unwrap();
        assert!(outcome.weak.sentences.is_empty());
        assert_eq!(outcome.dropped, 4);
        assert!(!outcome.warnings.is_empty());

        // Stage 2 then equals a plain headless train on the labeled data.
        let mut stage2_cfg = cfg.clone();
        stage2_cfg.seed = cfg.seed + 1;
        stage2_cfg.lambda = 0.0;
        let classes: Vec<String> = labeled.label_classes.iter().cloned().collect();
        let fresh = init_model_without_span_head(&classes, &labeled, &stage2_cfg).unwrap();
        let (plain, _) = train(&fresh, &labeled, &stage2_cfg).unwrap();
        assert_eq!(outcome.stage2, plain);
    }

    #[test]
    fn empty_unlabeled_set_warns_and_still_trains() {
        let labeled = toy_corpus(6);
        let empty = Corpus::from_sentences(Vec::new()).unwrap();
        let outcome = self_train(&labeled, &empty, &small_cfg()).unwrap();
        assert!(outcome.warnings.iter().any(|w| w.contains("empty")));
        assert!(outcome.weak.sentences.is_empty());
        assert!(!outcome.stage2.has_span_head());
    }

    #[test]
    fn best_dev_checkpoint_is_recorded() {
        let corpus = toy_corpus(12);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = TrainConfig {
            dev_fraction: 0.25,
            select_best_dev: true,
            epochs: 4,
            ..small_cfg()
        };
        let model = init_model(&classes, &corpus, &cfg).unwrap();
        let (_, history) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(history.dev_sentences, 3);
        let best = history.best_epoch.expect("dev split present, best epoch tracked");
        let best_f1 = history.epochs[best - 1].dev_f1.unwrap();
        for e in &history.epochs {
            assert!(e.dev_f1.unwrap() <= best_f1);
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { lambda: -0.5, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { dev_fraction: 1.0, ..base.clone() },
            TrainConfig { lr: 0.0, ..base.clone() },
            TrainConfig { alpha: Some((0.0, 1.0)), ..base.clone() },
            TrainConfig { gamma: f64::NAN, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?} should fail validation");
        }
        assert!(base.validate().is_ok());
    }

    #[test]
    fn lambda_on_headless_model_is_a_config_error() {
        let corpus = toy_corpus(4);
        let classes: Vec<String> = corpus.label_classes.iter().cloned().collect();
        let cfg = small_cfg();
        let headless = init_model_without_span_head(&classes, &corpus, &cfg).unwrap();
        assert!(matches!(train(&headless, &corpus, &cfg), Err(Error::Config(_))));
    }
}

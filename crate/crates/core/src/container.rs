//! Model container: one version byte, a UTF-8 text header (config, classes,
//! vocabulary, parameter shapes), a little-endian f64 payload, and an 8-byte
//! FNV-1a checksum of the payload. Round trips are bit-exact.

use crate::crf::TagSet;
use crate::encoder::SubwordVocab;
use crate::error::{Error, Result};
use crate::pipeline::{Model, ModelParams, ParamData, SpanParamsData, TrainConfig};

pub const CONTAINER_VERSION: u8 = 1;
const MAGIC: &str = "spancrf-model";
const HEADER_END: &str = "---";

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or("none".to_string(), |x| x.to_string())
}

fn fmt_opt_pair(v: Option<(f64, f64)>) -> String {
    v.map_or("none".to_string(), |(a, b)| format!("{a},{b}"))
}

pub fn save_model(model: &Model) -> Vec<u8> {
    let cfg = &model.cfg;
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("config.seed={}\n", cfg.seed));
    header.push_str(&format!("config.d={}\n", cfg.d));
    header.push_str(&format!("config.window={}\n", cfg.window));
    header.push_str(&format!("config.k_max={}\n", cfg.k_max));
    header.push_str(&format!("config.k_sub={}\n", cfg.k_sub));
    header.push_str(&format!("config.vocab_size={}\n", cfg.vocab_size));
    header.push_str(&format!("config.lambda={}\n", cfg.lambda));
    header.push_str(&format!("config.gamma={}\n", cfg.gamma));
    header.push_str(&format!("config.alpha={}\n", fmt_opt_pair(cfg.alpha)));
    header.push_str(&format!("config.lr={}\n", cfg.lr));
    header.push_str(&format!("config.batch_size={}\n", cfg.batch_size));
    header.push_str(&format!("config.epochs={}\n", cfg.epochs));
    header.push_str(&format!("config.constrained_decode={}\n", cfg.constrained_decode));
    header.push_str(&format!(
        "config.confidence_threshold={}\n",
        fmt_opt_f64(cfg.confidence_threshold)
    ));
    header.push_str(&format!("config.dev_fraction={}\n", cfg.dev_fraction));
    header.push_str(&format!("config.select_best_dev={}\n", cfg.select_best_dev));
    header.push_str(&format!("classes={}\n", model.tags.classes().join("\t")));
    header.push_str(&format!("span_head={}\n", model.has_span_head()));
    header.push_str(&format!("vocab={}\n", model.vocab.len()));
    for (id, entry) in model.vocab.entries().iter().enumerate() {
        header.push_str(&format!("{id}\t{entry}\n"));
    }

    let ordered = model.params.ordered();
    let mut float_count = 0usize;
    for (name, p) in &ordered {
        header.push_str(&format!("param.{name}={}x{}\n", p.rows, p.cols));
        float_count += p.values.len();
    }
    header.push_str(&format!("payload={float_count}\n"));
    header.push_str(HEADER_END);
    header.push('\n');

    let mut payload = Vec::with_capacity(float_count * 8);
    for (_, p) in &ordered {
        for v in &p.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(1 + header.len() + payload.len() + 8);
    out.push(CONTAINER_VERSION);
    out.extend_from_slice(header.as_bytes());
    let checksum = fnv1a64(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Container("truncated header".to_string()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Container("header is not valid UTF-8".to_string()))?;
        self.pos += nl + 1;
        Ok(line)
    }

    /// Next line must be `key=<value>`; returns the value.
    fn expect_kv(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| Error::Container(format!("expected `{key}=...`, found {line:?}")))
    }
}

fn parse_num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| Error::Container(format!("bad {what}: {s:?}")))
}

fn parse_opt_f64(what: &str, s: &str) -> Result<Option<f64>> {
    if s == "none" {
        Ok(None)
    } else {
        Ok(Some(parse_num(what, s)?))
    }
}

fn parse_opt_pair(what: &str, s: &str) -> Result<Option<(f64, f64)>> {
    if s == "none" {
        return Ok(None);
    }
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::Container(format!("bad {what}: {s:?}")))?;
    Ok(Some((parse_num(what, a)?, parse_num(what, b)?)))
}

fn expected_dims(
    name: &str,
    cfg: &TrainConfig,
    vocab_len: usize,
    tag_count: usize,
) -> (usize, usize) {
    let d = cfg.d;
    let m = tag_count;
    match name {
        "embed" => (vocab_len, d),
        "word_wa" | "span_pool_wa" => (d, 1),
        "word_walpha" => (cfg.k_sub, cfg.k_sub),
        "ctx_w1" => ((2 * cfg.window + 1) * d, d),
        "ctx_b1" | "ctx_b2" | "span_ffn_b1" => (1, d),
        "ctx_w2" | "span_ffn_w1" => (d, d),
        "span_pool_walpha" => (cfg.k_max, cfg.k_max),
        "span_ffn_w2" => (d, 2),
        "span_ffn_b2" => (1, 2),
        "emit_w" => (d, m),
        "emit_b" | "start" | "end" => (1, m),
        "trans" => (m, m),
        other => unreachable!("no dims for {other}"),
    }
}

const PARAMS_COMMON_HEAD: [&str; 7] =
    ["embed", "word_wa", "word_walpha", "ctx_w1", "ctx_b1", "ctx_w2", "ctx_b2"];
const PARAMS_SPAN: [&str; 6] = [
    "span_pool_wa",
    "span_pool_walpha",
    "span_ffn_w1",
    "span_ffn_b1",
    "span_ffn_w2",
    "span_ffn_b2",
];
const PARAMS_COMMON_TAIL: [&str; 5] = ["emit_w", "emit_b", "trans", "start", "end"];

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    if bytes.is_empty() {
        return Err(Error::Container("empty container".to_string()));
    }
    if bytes[0] != CONTAINER_VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {} (expected {CONTAINER_VERSION})",
            bytes[0]
        )));
    }
    let mut lines = Lines { bytes, pos: 1 };
    if lines.next_line()? != MAGIC {
        return Err(Error::Container("missing container magic line".to_string()));
    }

    let cfg = TrainConfig {
        seed: parse_num("seed", lines.expect_kv("config.seed")?)?,
        d: parse_num("d", lines.expect_kv("config.d")?)?,
        window: parse_num("window", lines.expect_kv("config.window")?)?,
        k_max: parse_num("k_max", lines.expect_kv("config.k_max")?)?,
        k_sub: parse_num("k_sub", lines.expect_kv("config.k_sub")?)?,
        vocab_size: parse_num("vocab_size", lines.expect_kv("config.vocab_size")?)?,
        lambda: parse_num("lambda", lines.expect_kv("config.lambda")?)?,
        gamma: parse_num("gamma", lines.expect_kv("config.gamma")?)?,
        alpha: parse_opt_pair("alpha", lines.expect_kv("config.alpha")?)?,
        lr: parse_num("lr", lines.expect_kv("config.lr")?)?,
        batch_size: parse_num("batch_size", lines.expect_kv("config.batch_size")?)?,
        epochs: parse_num("epochs", lines.expect_kv("config.epochs")?)?,
        constrained_decode: parse_num(
            "constrained_decode",
            lines.expect_kv("config.constrained_decode")?,
        )?,
        confidence_threshold: parse_opt_f64(
            "confidence_threshold",
            lines.expect_kv("config.confidence_threshold")?,
        )?,
        dev_fraction: parse_num("dev_fraction", lines.expect_kv("config.dev_fraction")?)?,
        select_best_dev: parse_num(
            "select_best_dev",
            lines.expect_kv("config.select_best_dev")?,
        )?,
    };
    cfg.validate().map_err(|e| Error::Container(format!("invalid stored config: {e}")))?;

    let classes_line = lines.expect_kv("classes")?;
    let classes: Vec<String> = if classes_line.is_empty() {
        Vec::new()
    } else {
        classes_line.split('\t').map(|s| s.to_string()).collect()
    };
    let tags = TagSet::from_classes(classes.iter().cloned());
    if tags.classes() != classes.as_slice() {
        return Err(Error::Container("classes are not sorted and unique".to_string()));
    }

    let span_head: bool = parse_num("span_head", lines.expect_kv("span_head")?)?;

    let vocab_len: usize = parse_num("vocab", lines.expect_kv("vocab")?)?;
    let mut entries = Vec::with_capacity(vocab_len);
    for id in 0..vocab_len {
        let line = lines.next_line()?;
        let (got_id, entry) = line
            .split_once('\t')
            .ok_or_else(|| Error::Container(format!("bad vocabulary line {line:?}")))?;
        if parse_num::<usize>("vocabulary id", got_id)? != id {
            return Err(Error::Container(format!("vocabulary ids out of order at {line:?}")));
        }
        entries.push(entry.to_string());
    }
    let vocab = SubwordVocab::from_entries(entries)?;

    let mut expected_names: Vec<&str> = PARAMS_COMMON_HEAD.to_vec();
    if span_head {
        expected_names.extend(PARAMS_SPAN);
    }
    expected_names.extend(PARAMS_COMMON_TAIL);

    let mut shapes = Vec::with_capacity(expected_names.len());
    let mut float_count = 0usize;
    for name in &expected_names {
        let value = lines.expect_kv(&format!("param.{name}"))?;
        let (r, c) = value
            .split_once('x')
            .ok_or_else(|| Error::Container(format!("bad shape for {name}: {value:?}")))?;
        let rows: usize = parse_num("rows", r)?;
        let cols: usize = parse_num("cols", c)?;
        let want = expected_dims(name, &cfg, vocab.len(), tags.len());
        if (rows, cols) != want {
            return Err(Error::Container(format!(
                "{name} has shape {rows}x{cols}, expected {}x{}",
                want.0, want.1
            )));
        }
        shapes.push((rows, cols));
        float_count += rows * cols;
    }

    let declared: usize = parse_num("payload", lines.expect_kv("payload")?)?;
    if declared != float_count {
        return Err(Error::Container(format!(
            "payload declares {declared} floats, parameters need {float_count}"
        )));
    }
    if lines.next_line()? != HEADER_END {
        return Err(Error::Container("missing header terminator".to_string()));
    }

    let payload_start = lines.pos;
    let need = float_count * 8 + 8;
    let remaining = bytes.len() - payload_start;
    if remaining != need {
        return Err(Error::Container(format!(
            "payload region holds {remaining} bytes, expected {need}"
        )));
    }
    let payload = &bytes[payload_start..payload_start + float_count * 8];
    let stored = u64::from_le_bytes(bytes[payload_start + float_count * 8..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::Container(format!(
            "checksum mismatch: stored {stored:016x}, computed {computed:016x}"
        )));
    }

    let mut offset = 0usize;
    let mut take = |rows: usize, cols: usize| -> ParamData {
        let n = rows * cols;
        let values = payload[offset * 8..(offset + n) * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        offset += n;
        ParamData::new(rows, cols, values)
    };

    let mut it = shapes.iter();
    let mut next = |f: &mut dyn FnMut(usize, usize) -> ParamData| {
        let &(r, c) = it.next().expect("shape list length");
        f(r, c)
    };

    let embed = next(&mut take);
    let word_wa = next(&mut take);
    let word_walpha = next(&mut take);
    let ctx_w1 = next(&mut take);
    let ctx_b1 = next(&mut take);
    let ctx_w2 = next(&mut take);
    let ctx_b2 = next(&mut take);
    let span = if span_head {
        Some(SpanParamsData {
            pool_wa: next(&mut take),
            pool_walpha: next(&mut take),
            ffn_w1: next(&mut take),
            ffn_b1: next(&mut take),
            ffn_w2: next(&mut take),
            ffn_b2: next(&mut take),
        })
    } else {
        None
    };
    let emit_w = next(&mut take);
    let emit_b = next(&mut take);
    let trans = next(&mut take);
    let start = next(&mut take);
    let end = next(&mut take);

    Ok(Model {
        vocab,
        tags,
        cfg,
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
            emit_b,
            trans,
            start,
            end,
        },
    })
}

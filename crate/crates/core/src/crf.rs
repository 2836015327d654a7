//! Linear-chain CRF: tag inventory, sequence scoring, the forward algorithm,
//! Viterbi decoding with optional IOB2 transition constraints, and
//! brute-force enumeration oracles for both.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Enumeration limit for the oracles: at most 2^20 paths.
pub const ORACLE_PATH_LIMIT: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagKind {
    Outside,
    Begin(usize),
    Inside(usize),
}

/// The tag inventory: `O` at index 0, then `B-X`, `I-X` per class with
/// classes in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    classes: Vec<String>,
}

impl TagSet {
    pub fn from_classes<I, S>(classes: I) -> TagSet
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        classes.sort();
        classes.dedup();
        let mut tags = vec!["O".to_string()];
        for c in &classes {
            tags.push(format!("B-{c}"));
            tags.push(format!("I-{c}"));
        }
        TagSet { tags, classes }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tag(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn index_of(&self, tag: &str) -> Result<usize> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::InvalidTag {
                tag: tag.to_string(),
                msg: "not in the tag set".to_string(),
            })
    }

    pub fn indices_of(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.index_of(l)).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.tags[i].clone()).collect()
    }

    fn kind(&self, index: usize) -> TagKind {
        if index == 0 {
            TagKind::Outside
        } else if index % 2 == 1 {
            TagKind::Begin((index - 1) / 2)
        } else {
            TagKind::Inside((index - 2) / 2)
        }
    }

    /// A sequence may open with anything except an inside tag.
    pub fn start_allowed(&self, index: usize) -> bool {
        !matches!(self.kind(index), TagKind::Inside(_))
    }

    /// `I-X` must continue a `B-X` or `I-X`; everything else is free.
    pub fn transition_allowed(&self, from: usize, to: usize) -> bool {
        match self.kind(to) {
            TagKind::Inside(c) => matches!(
                self.kind(from),
                TagKind::Begin(f) | TagKind::Inside(f) if f == c
            ),
            _ => true,
        }
    }
}

fn check_dims(
    op: &'static str,
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
) -> Result<usize> {
    let t = emissions.cols();
    assert!(emissions.rows() >= 1, "{op}: empty sequence");
    if trans.shape() != [t, t] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: trans.shape(),
            rhs: vec![t, t],
        });
    }
    for (v, which) in [(start, "start"), (end, "end")] {
        if v.shape() != [1, t] {
            let _ = which;
            return Err(Error::ShapeMismatch {
                op,
                lhs: v.shape(),
                rhs: vec![1, t],
            });
        }
    }
    Ok(t)
}

/// Graph score of one tag path:
/// `start[y_0] + sum_t emit[t, y_t] + sum_t trans[y_{t-1}, y_t] + end[y_l]`.
pub fn sequence_score(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    tags: &[usize],
) -> Result<Tensor> {
    let t_count = check_dims("sequence_score", emissions, trans, start, end)?;
    let l = emissions.rows();
    assert_eq!(tags.len(), l, "tag path length");
    for &y in tags {
        if y >= t_count {
            return Err(Error::InvalidIndex {
                op: "sequence_score",
                index: y,
                bound: t_count,
            });
        }
    }

    let emit_idx: Vec<usize> = tags.iter().enumerate().map(|(t, &y)| t * t_count + y).collect();
    let mut score = emissions.gather_flat(&emit_idx)?.sum();
    if l > 1 {
        let trans_idx: Vec<usize> = tags
            .windows(2)
            .map(|w| w[0] * t_count + w[1])
            .collect();
        score = score.add(&trans.gather_flat(&trans_idx)?.sum())?;
    }
    score = score.add(&start.gather_flat(&[tags[0]])?.sum())?;
    score = score.add(&end.gather_flat(&[tags[l - 1]])?.sum())?;
    Ok(score)
}

/// Graph log partition via the forward algorithm, log-sum-exp at every step.
pub fn forward_log_partition(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
) -> Result<Tensor> {
    let t_count = check_dims("forward_log_partition", emissions, trans, start, end)?;
    let l = emissions.rows();

    let mut alpha = emissions.slice_rows(0, 1)?.add(start)?;
    for t in 1..l {
        let scores = trans.add_colwise(&alpha.reshape(t_count, 1)?)?;
        alpha = scores
            .log_sum_exp_cols()
            .add(&emissions.slice_rows(t, 1)?)?;
    }
    Ok(alpha.add(end)?.reshape(t_count, 1)?.log_sum_exp_cols())
}

/// Negative log-likelihood of the gold path: `logZ - score(gold)`.
pub fn crf_nll(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    tags: &[usize],
) -> Result<Tensor> {
    let logz = forward_log_partition(emissions, trans, start, end)?;
    let score = sequence_score(emissions, trans, start, end, tags)?;
    logz.add(&score.neg())
}

/// Max-product decode. With `constraints` set, transitions and openings
/// illegal under IOB2 score negative infinity. Ties break toward the lower
/// tag index at every step. Returns the best path and its total score.
pub fn viterbi(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    constraints: Option<&TagSet>,
) -> Result<(Vec<usize>, f64)> {
    let t_count = check_dims("viterbi", emissions, trans, start, end)?;
    if let Some(ts) = constraints {
        assert_eq!(ts.len(), t_count, "constraint tag set width");
    }
    let l = emissions.rows();
    let em = emissions.values();
    let tr = trans.values();
    let st = start.values();
    let en = end.values();

    let mut delta: Vec<f64> = (0..t_count)
        .map(|k| {
            let legal = constraints.map_or(true, |ts| ts.start_allowed(k));
            if legal {
                st[k] + em[k]
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(l.saturating_sub(1));

    for t in 1..l {
        let mut next = vec![f64::NEG_INFINITY; t_count];
        let mut bp = vec![0usize; t_count];
        for k in 0..t_count {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for j in 0..t_count {
                if let Some(ts) = constraints {
                    if !ts.transition_allowed(j, k) {
                        continue;
                    }
                }
                let cand = delta[j] + tr[j * t_count + k];
                if cand > best {
                    best = cand;
                    arg = j;
                }
            }
            next[k] = best + em[t * t_count + k];
            bp[k] = arg;
        }
        delta = next;
        backptr.push(bp);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0usize;
    for k in 0..t_count {
        let total = delta[k] + en[k];
        if total > best {
            best = total;
            last = k;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::NoLegalPath);
    }

    let mut path = vec![0usize; l];
    path[l - 1] = last;
    for t in (1..l).rev() {
        path[t - 1] = backptr[t - 1][path[t]];
    }
    Ok((path, best))
}

/// Plain-f64 score of one path; shared by the oracles and the confidence
/// measure.
pub fn path_score_f64(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    tags: &[usize],
) -> f64 {
    let t_count = emissions.cols();
    let em = emissions.values();
    let tr = trans.values();
    let l = tags.len();
    let mut s = start.values()[tags[0]] + end.values()[tags[l - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += em[t * t_count + y];
    }
    for w in tags.windows(2) {
        s += tr[w[0] * t_count + w[1]];
    }
    s
}

fn oracle_guard(t_count: usize, l: usize) -> Result<()> {
    let paths = (t_count as u128)
        .checked_pow(l as u32)
        .unwrap_or(u128::MAX);
    if paths > ORACLE_PATH_LIMIT {
        return Err(Error::OracleTooLarge(format!(
            "{t_count}^{l} = {paths} paths exceeds {ORACLE_PATH_LIMIT}"
        )));
    }
    Ok(())
}

fn enumerate_paths(t_count: usize, l: usize, mut visit: impl FnMut(&[usize])) {
    let mut path = vec![0usize; l];
    loop {
        visit(&path);
        let mut pos = l;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < t_count {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// Log partition by summing over every path explicitly. Guarded to
/// `ORACLE_PATH_LIMIT` paths.
pub fn oracle_log_partition(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
) -> Result<f64> {
    let t_count = check_dims("oracle_log_partition", emissions, trans, start, end)?;
    let l = emissions.rows();
    oracle_guard(t_count, l)?;

    let mut scores = Vec::new();
    enumerate_paths(t_count, l, |path| {
        scores.push(path_score_f64(emissions, trans, start, end, path));
    });
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
    Ok(mx + sum.ln())
}

/// Best path by exhaustive search, honoring the same constraints and the
/// same lowest-index tie-break as [`viterbi`]. Guarded to
/// `ORACLE_PATH_LIMIT` paths.
pub fn oracle_best_path(
    emissions: &Tensor,
    trans: &Tensor,
    start: &Tensor,
    end: &Tensor,
    constraints: Option<&TagSet>,
) -> Result<(Vec<usize>, f64)> {
    let t_count = check_dims("oracle_best_path", emissions, trans, start, end)?;
    let l = emissions.rows();
    oracle_guard(t_count, l)?;

    let legal = |path: &[usize]| -> bool {
        let ts = match constraints {
            Some(ts) => ts,
            None => return true,
        };
        if !ts.start_allowed(path[0]) {
            return false;
        }
        path.windows(2).all(|w| ts.transition_allowed(w[0], w[1]))
    };

    let mut best: Option<(Vec<usize>, f64)> = None;
    enumerate_paths(t_count, l, |path| {
        if !legal(path) {
            return;
        }
        let s = path_score_f64(emissions, trans, start, end, path);
        let better = match &best {
            None => true,
            Some((_, bs)) => s > *bs,
        };
        if better {
            best = Some((path.to_vec(), s));
        }
    });
    best.ok_or(Error::NoLegalPath)
}

//! Class-conditioned context attention, context averaging, context-source
//! filtering and label-noise injection.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::WordTable;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamSet, Tensor, Var};

/// Context labels of one focal object and their word vectors.
///
/// The matrix holds one row per label (`n_s x d_w`), i.e. the transpose of
/// the column layout `S ∈ R^{d_w × n_s}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    labels: Vec<String>,
    matrix: Tensor,
}

impl ContextSet {
    pub fn from_labels<S: AsRef<str>>(labels: &[S], table: &WordTable) -> Result<Self> {
        Ok(ContextSet {
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
            matrix: table.matrix_for(labels)?,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Projections `W_K`, `W_Q` (`d_c x d_w`), no biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcamParams {
    pub w_k: ParamId,
    pub w_q: ParamId,
}

impl CcamParams {
    pub fn register(ps: &mut ParamSet, d_w: usize, d_c: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(CcamParams {
            w_k: ps.insert_glorot("ccam.w_k", d_c, d_w, rng)?,
            w_q: ps.insert_glorot("ccam.w_q", d_c, d_w, rng)?,
        })
    }

    pub fn d_c(&self, ps: &ParamSet) -> usize {
        ps.value(self.w_k).rows()
    }

    /// Attention over the rows of `s` (`n_s x d_w`) conditioned on the class
    /// word `w` (`1 x d_w`). Returns the weights (`1 x n_s`) and the pooled
    /// context (`1 x d_w`).
    pub fn forward(&self, g: &mut Graph<'_>, s: Var, w: Var) -> Result<(Var, Var)> {
        let (n_s, d_w) = g.value(s).dims2()?;
        if n_s == 0 {
            return Err(Error::EmptyContext);
        }
        if g.value(w).shape() != [1, d_w] {
            return Err(Error::dim("ccam_attend", g.value(w).shape(), &[1, d_w]));
        }
        let d_c = self.d_c(g.params());
        let keys = g.linear(s, self.w_k, None)?; // n_s x d_c
        let query = g.linear(w, self.w_q, None)?; // 1 x d_c
        let keys_t = g.transpose(keys)?;
        let scores = g.matmul(query, keys_t)?; // 1 x n_s
        let scores = g.scale(scores, 1.0 / (d_c as f64).sqrt());
        let weights = g.softmax_rows(scores)?;
        let pooled = g.matmul(weights, s)?;
        Ok((weights, pooled))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
    pub scores: Vec<f64>,
}

impl AttentionResult {
    /// `(label, weight)` pairs by descending weight; ties keep input order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut pairs: Vec<(String, f64)> = self
            .labels
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
        pairs
    }
}

/// Value-only class-conditioned attention over a context set.
pub fn ccam_attend(
    set: &ContextSet,
    word: &[f64],
    ps: &ParamSet,
    params: &CcamParams,
) -> Result<AttentionResult> {
    if set.is_empty() {
        return Err(Error::EmptyContext);
    }
    let mut g = Graph::new(ps);
    let s = g.constant(set.matrix().clone());
    let w = g.constant(Tensor::row(word.to_vec()));
    let (weights, pooled) = params.forward(&mut g, s, w)?;
    let weights_v = g.value(weights).data().to_vec();
    let scores = attention_scores(set, word, ps, params)?;
    Ok(AttentionResult {
        labels: set.labels().to_vec(),
        weights: weights_v,
        pooled: g.value(pooled).data().to_vec(),
        scores,
    })
}

/// Scaled scores `(W_K s_i)·(W_Q w) / sqrt(d_c)` for each context row.
pub fn attention_scores(
    set: &ContextSet,
    word: &[f64],
    ps: &ParamSet,
    params: &CcamParams,
) -> Result<Vec<f64>> {
    let wk = ps.value(params.w_k);
    let wq = ps.value(params.w_q);
    let d_c = wk.rows();
    let q = wq.matmul(&Tensor::matrix(word.len(), 1, word.to_vec())?)?;
    let k = wk.matmul(&set.matrix().transpose()?)?; // d_c x n_s
    let kq = k.transpose()?.matmul(&q)?;
    Ok(kq.data().iter().map(|v| v / (d_c as f64).sqrt()).collect())
}

/// Mean of the context word vectors.
pub fn context_average(set: &ContextSet) -> Result<Vec<f64>> {
    average_rows(set.matrix())
}

pub(crate) fn average_rows(m: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = m.dims2()?;
    if n == 0 {
        return Err(Error::EmptyContext);
    }
    let mut out = vec![0.0; d];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(m.row_slice(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Which class pool context labels may come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextSource {
    /// Training classes only.
    Cs,
    /// Test classes only.
    Ct,
    #[default]
    Union,
}

impl ContextSource {
    pub const ALL: [ContextSource; 3] =
        [ContextSource::Cs, ContextSource::Ct, ContextSource::Union];
}

impl fmt::Display for ContextSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextSource::Cs => "cs",
            ContextSource::Ct => "ct",
            ContextSource::Union => "union",
        })
    }
}

impl FromStr for ContextSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(ContextSource::Cs),
            "ct" => Ok(ContextSource::Ct),
            "union" => Ok(ContextSource::Union),
            other => Err(Error::Config(format!(
                "unknown context source {other:?} (expected cs, ct or union)"
            ))),
        }
    }
}

/// Keeps the labels whose class belongs to the pool selected by `mode`,
/// preserving order. Labels that are neither train nor test classes are
/// always dropped.
pub fn select_context<S: AsRef<str>>(
    labels: &[S],
    mode: ContextSource,
    train: &HashSet<String>,
    test: &HashSet<String>,
) -> Vec<String> {
    labels
        .iter()
        .map(AsRef::as_ref)
        .filter(|l| match mode {
            ContextSource::Cs => train.contains(*l),
            ContextSource::Ct => test.contains(*l),
            ContextSource::Union => train.contains(*l) || test.contains(*l),
        })
        .map(str::to_string)
        .collect()
}

/// Replacement vocabulary for [`inject_noise`].
#[derive(Clone, Debug)]
pub struct NoiseVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl NoiseVocab {
    pub fn new(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        NoiseVocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Independently replaces each label, with probability `p_noise`, by a
/// uniformly drawn vocabulary word different from it.
pub fn inject_noise<S: AsRef<str>>(
    labels: &[S],
    p_noise: f64,
    vocab: &NoiseVocab,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&p_noise) {
        return Err(Error::Domain(format!("p_noise {p_noise} outside [0, 1]")));
    }
    if p_noise > 0.0 && vocab.len() < 2 {
        return Err(Error::Domain(
            "noise vocabulary needs at least two words".into(),
        ));
    }
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let label = label.as_ref();
        let u: f64 = rng.random();
        if p_noise > 0.0 && u < p_noise {
            let replacement = match vocab.index.get(label) {
                Some(&own) => {
                    let mut j = rng.random_range(0..vocab.len() - 1);
                    if j >= own {
                        j += 1;
                    }
                    j
                }
                None => rng.random_range(0..vocab.len()),
            };
            out.push(vocab.words[replacement].clone());
        } else {
            out.push(label.to_string());
        }
    }
    Ok(out)
}

/// Serialized attention listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub focal: String,
    pub weights: Vec<LabelWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelWeight {
    pub label: String,
    pub weight: f64,
}

impl AttentionDump {
    pub fn from_result(focal: &str, result: &AttentionResult) -> Self {
        AttentionDump {
            focal: focal.to_string(),
            weights: result
                .ranked()
                .into_iter()
                .map(|(label, weight)| LabelWeight { label, weight })
                .collect(),
        }
    }

    pub fn top(&self, n: usize) -> &[LabelWeight] {
        &self.weights[..n.min(self.weights.len())]
    }

    pub fn bottom(&self, n: usize) -> &[LabelWeight] {
        &self.weights[self.weights.len().saturating_sub(n)..]
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{average_rows, ccam_attend, AttentionResult, CcamParams, ContextSet};
use crate::embeddings::{EncoderParams, ProjectorParams, WordTable};
use crate::error::{Error, Result};
use crate::fusion::{GateParams, RefineParams};
use crate::numerics::{log_sum_exp, softmax, Graph, ParamId, ParamSet, Tensor, Var};
use crate::synthcorpus::SceneInstance;

use super::{ContextAttention, Episode, ModelVariant};

/// Layer widths and the two switches that separate the default model from
/// the bias-free, unsquared-distance reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_f: usize,
    pub d_x: usize,
    pub d_w: usize,
    /// Width of the attention key/query space.
    pub d_c: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub encoder_hidden: usize,
    pub gate_bias: bool,
    pub squared_distance: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_dims(32, 64, 16)
    }
}

impl ModelConfig {
    pub fn with_dims(d_f: usize, d_x: usize, d_w: usize) -> Self {
        ModelConfig {
            d_f,
            d_x,
            d_w,
            d_c: d_x,
            d_z: d_x,
            d_h: d_w,
            encoder_hidden: d_x,
            gate_bias: true,
            squared_distance: true,
        }
    }

    /// No gate biases and plain Euclidean distances.
    pub fn strict(mut self) -> Self {
        self.gate_bias = false;
        self.squared_distance = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_f,
            self.d_x,
            self.d_w,
            self.d_c,
            self.d_z,
            self.d_h,
            self.encoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Parameter handles of one variant. Components a variant does not use are
/// never registered.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub projector: Option<ProjectorParams>,
    pub ccam: Option<CcamParams>,
    pub gate: Option<GateParams>,
    pub refine: Option<RefineParams>,
}

/// A variant's network together with its trainable values.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub net: Network,
    pub params: ParamSet,
    pub seed: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl ModelParams {
    /// Each component draws from its own stream, so components shared by two
    /// variants start from identical values under one seed.
    pub fn new(variant: ModelVariant, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut ps = ParamSet::new();
        let encoder = EncoderParams::register(
            &mut ps,
            c.d_f,
            c.encoder_hidden,
            c.d_x,
            &mut stream(seed, 10),
        )?;
        let (projector, gate) = if variant.uses_context() {
            (
                Some(ProjectorParams::register(
                    &mut ps,
                    c.d_w,
                    c.d_x,
                    &mut stream(seed, 11),
                )?),
                Some(GateParams::register(
                    &mut ps,
                    c.d_x,
                    c.d_z,
                    c.gate_bias,
                    &mut stream(seed, 13),
                )?),
            )
        } else {
            (None, None)
        };
        let ccam = if variant.context_attention() == Some(ContextAttention::Ccam) {
            Some(CcamParams::register(
                &mut ps,
                c.d_w,
                c.d_c,
                &mut stream(seed, 12),
            )?)
        } else {
            None
        };
        let refine = if variant.uses_word_refine() {
            Some(RefineParams::register(
                &mut ps,
                c.d_w,
                c.d_h,
                c.d_x,
                &mut stream(seed, 14),
            )?)
        } else {
            None
        };
        Ok(ModelParams {
            net: Network {
                variant,
                config,
                encoder,
                projector,
                ccam,
                gate,
                refine,
            },
            params: ps,
            seed,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.net.variant
    }

    /// Loss value and parameter gradients for one episode.
    pub fn loss_and_grads(
        &self,
        ep: &Episode,
        words: &WordTable,
    ) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
        let mut g = Graph::new(&self.params);
        let (logits, targets) = self.net.logits(&mut g, ep, words)?;
        let loss = g.softmax_cross_entropy(logits, &targets)?;
        let value = g.value(loss).item()?;
        Ok((value, g.param_grads(loss)?))
    }

    /// Class-conditioned attention of `focal`'s word over `labels`.
    pub fn attend<S: AsRef<str>>(
        &self,
        focal: &str,
        labels: &[S],
        words: &WordTable,
    ) -> Result<AttentionResult> {
        let ccam = self.net.ccam.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "variant {} has no context attention",
                self.net.variant
            ))
        })?;
        let set = ContextSet::from_labels(labels, words)?;
        ccam_attend(&set, words.lookup(focal)?, &self.params, ccam)
    }

    /// Per-instance embeddings for external inspection.
    pub fn embed(&self, instances: &[SceneInstance], words: &WordTable) -> Result<Embeddings> {
        self.net.embed(&self.params, instances, words)
    }
}

/// Rows align with the instances passed to [`ModelParams::embed`]; context
/// rows are `None` for variants without a context path or empty contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub visual: Vec<Vec<f64>>,
    pub context_avg: Vec<Option<Vec<f64>>>,
    pub context_ccam: Vec<Option<Vec<f64>>>,
    pub fused: Vec<Option<Vec<f64>>>,
}

fn features_matrix<'a>(items: impl Iterator<Item = &'a SceneInstance>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = items.map(|i| i.features.as_slice()).collect();
    Tensor::from_rows(&rows)
}

/// Row-wise context averages (zeros where the context is empty) and the
/// nonempty mask.
fn context_averages<'a>(
    items: impl Iterator<Item = &'a SceneInstance>,
    words: &WordTable,
) -> Result<(Tensor, Vec<bool>)> {
    let mut rows = Vec::new();
    let mut mask = Vec::new();
    for inst in items {
        if inst.context.is_empty() {
            rows.push(vec![0.0; words.dim()]);
            mask.push(false);
        } else {
            rows.push(average_rows(&words.matrix_for(&inst.context)?)?);
            mask.push(true);
        }
    }
    Ok((Tensor::from_rows(&rows)?, mask))
}

impl Network {
    fn check_dims(&self, ep_dim: usize, words: &WordTable) -> Result<()> {
        if ep_dim != self.config.d_f {
            return Err(Error::dim(
                "episode features",
                &[ep_dim],
                &[self.config.d_f],
            ));
        }
        if (self.projector.is_some() || self.refine.is_some()) && words.dim() != self.config.d_w {
            return Err(Error::dim("word table", &[words.dim()], &[self.config.d_w]));
        }
        Ok(())
    }

    /// Context-fused rows where `mask` holds, the visual rows elsewhere.
    fn fuse(&self, g: &mut Graph<'_>, visual: Var, pooled: Var, mask: &[bool]) -> Result<Var> {
        let (Some(projector), Some(gate)) = (&self.projector, &self.gate) else {
            return Ok(visual);
        };
        if !mask.iter().any(|&m| m) {
            return Ok(visual);
        }
        let gc = projector.forward(g, pooled)?;
        let (fused, _) = gate.forward(g, visual, gc)?;
        g.select_rows(mask, fused, visual)
    }

    /// Negative distances of every query (rows, flattened class-major) to
    /// every prototype, and the query targets.
    pub fn logits(
        &self,
        g: &mut Graph<'_>,
        ep: &Episode,
        words: &WordTable,
    ) -> Result<(Var, Vec<usize>)> {
        let ways = ep.ways();
        if ways == 0 || ep.support.iter().any(Vec::is_empty) {
            return Err(Error::Contract(
                "episode with an empty support class".into(),
            ));
        }
        let d_f = ep.support[0][0].features.len();
        self.check_dims(d_f, words)?;

        let xs = g.constant(features_matrix(ep.supports())?);
        let xq = g.constant(features_matrix(ep.queries())?);
        let fs = self.encoder.forward(g, xs)?;
        let fq = self.encoder.forward(g, xq)?;

        let (support, query) = match self.variant.context_attention() {
            None => (fs, fq),
            Some(mode) => {
                let (pooled_s, mask_s) = match (mode, &self.ccam) {
                    (ContextAttention::Ccam, Some(ccam)) => {
                        let mut rows = Vec::with_capacity(ep.n_support());
                        let mut mask = Vec::with_capacity(ep.n_support());
                        for (k, class) in ep.support.iter().enumerate() {
                            let word = words.lookup(&ep.roster[k])?;
                            for inst in class {
                                if inst.context.is_empty() {
                                    rows.push(g.constant(Tensor::zeros(&[1, words.dim()])));
                                    mask.push(false);
                                } else {
                                    let s = g.constant(words.matrix_for(&inst.context)?);
                                    let w = g.constant(Tensor::row(word.to_vec()));
                                    rows.push(ccam.forward(g, s, w)?.1);
                                    mask.push(true);
                                }
                            }
                        }
                        (g.stack_rows(&rows)?, mask)
                    }
                    _ => {
                        let (avg, mask) = context_averages(ep.supports(), words)?;
                        (g.constant(avg), mask)
                    }
                };
                let (avg_q, mask_q) = context_averages(ep.queries(), words)?;
                let pooled_q = g.constant(avg_q);
                let support = self.fuse(g, fs, pooled_s, &mask_s)?;
                let query = self.fuse(g, fq, pooled_q, &mask_q)?;
                (support, query)
            }
        };

        let mut groups = Vec::with_capacity(ways);
        let mut start = 0;
        for class in &ep.support {
            groups.push((start..start + class.len()).collect());
            start += class.len();
        }
        let mut protos = g.segment_mean(support, &groups)?;
        if let Some(refine) = &self.refine {
            let w = g.constant(words.matrix_for(&ep.roster)?);
            protos = refine.forward(g, w, protos)?.0;
        }
        let mut dist = g.sq_dist(query, protos)?;
        if !self.config.squared_distance {
            dist = g.sqrt(dist);
        }
        Ok((g.scale(dist, -1.0), ep.query_targets()))
    }

    fn embed(
        &self,
        ps: &ParamSet,
        instances: &[SceneInstance],
        words: &WordTable,
    ) -> Result<Embeddings> {
        let mut g = Graph::new(ps);
        let x = g.constant(features_matrix(instances.iter())?);
        let f = self.encoder.forward(&mut g, x)?;
        let visual = g.value(f).clone();
        let n = instances.len();
        let rows = |t: &Tensor, mask: &[bool]| -> Vec<Option<Vec<f64>>> {
            (0..n)
                .map(|i| mask[i].then(|| t.row_slice(i).to_vec()))
                .collect()
        };
        let (mut context_avg, mut context_ccam, mut fused) =
            (vec![None; n], vec![None; n], vec![None; n]);
        if let (Some(projector), Some(gate)) = (&self.projector, &self.gate) {
            let (avg, mask) = context_averages(instances.iter(), words)?;
            let c = g.constant(avg);
            let gc = projector.forward(&mut g, c)?;
            let (phi, _) = gate.forward(&mut g, f, gc)?;
            context_avg = rows(g.value(gc), &mask);
            fused = rows(g.value(phi), &mask);
            if let Some(ccam) = &self.ccam {
                for (i, inst) in instances.iter().enumerate() {
                    if inst.context.is_empty() {
                        continue;
                    }
                    let s = g.constant(words.matrix_for(&inst.context)?);
                    let w = g.constant(Tensor::row(words.lookup(&inst.class)?.to_vec()));
                    let pooled = ccam.forward(&mut g, s, w)?.1;
                    let projected = projector.forward(&mut g, pooled)?;
                    context_ccam[i] = Some(g.value(projected).data().to_vec());
                }
            }
        }
        Ok(Embeddings {
            visual: (0..n).map(|i| visual.row_slice(i).to_vec()).collect(),
            context_avg,
            context_ccam,
            fused,
        })
    }
}

/// Per-query class distributions of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutput {
    /// `n_query x ways`, rows sum to one.
    pub probabilities: Tensor,
    pub targets: Vec<usize>,
    /// Mean negative log-likelihood from the fused log-softmax.
    pub loss: f64,
}

pub fn forward_episode(
    ep: &Episode,
    model: &ModelParams,
    words: &WordTable,
) -> Result<EpisodeOutput> {
    let mut g = Graph::new(&model.params);
    let (logits, targets) = model.net.logits(&mut g, ep, words)?;
    let lv = g.value(logits);
    let (n, m) = lv.dims2()?;
    let mut probs = Vec::with_capacity(n * m);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = lv.row_slice(i);
        probs.extend(softmax(row)?);
        loss += log_sum_exp(row) - row[t];
    }
    Ok(EpisodeOutput {
        probabilities: Tensor::matrix(n, m, probs)?,
        targets,
        loss: loss / n as f64,
    })
}

/// Softmax over negative distances.
pub fn distribution_from_distances(distances: &[f64]) -> Result<Vec<f64>> {
    let neg: Vec<f64> = distances.iter().map(|d| -d).collect();
    softmax(&neg)
}

/// Mean negative log-probability of the true classes. Probabilities are
/// floored at the smallest positive normal so the result stays finite.
pub fn episode_loss<R: AsRef<[f64]>>(distributions: &[R], labels: &[usize]) -> Result<f64> {
    if distributions.len() != labels.len() || labels.is_empty() {
        return Err(Error::dim(
            "episode_loss",
            &[distributions.len()],
            &[labels.len()],
        ));
    }
    let mut total = 0.0;
    for (row, &t) in distributions.iter().zip(labels) {
        let row = row.as_ref();
        let p = *row.get(t).ok_or_else(|| {
            Error::Contract(format!("label {t} out of range for {} classes", row.len()))
        })?;
        total -= p.max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / labels.len() as f64)
}

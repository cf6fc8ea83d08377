use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthcorpus::Corpus;

use super::{forward_episode, EpisodeSampler, EpisodeSpec, ModelParams, ModelVariant};

const EVAL_SALT: u64 = 0x6576_616c;
const NOISE_SALT: u64 = 0x006e_6f69_7365;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub spec: EpisodeSpec,
    pub episodes: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            spec: EpisodeSpec::default(),
            episodes: 600,
            top_k: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: ModelVariant,
    pub spec: EpisodeSpec,
    pub mean: f64,
    pub ci95: f64,
    pub top_k: usize,
    pub n_episodes: usize,
    pub seed: u64,
    pub per_episode: Vec<f64>,
}

impl EvalReport {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

/// Mean and 95% half-width `1.96 * sigma / sqrt(n)` with the population
/// standard deviation.
pub fn ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Whether `target` is among the `k` most probable classes; ties rank the
/// lower index first.
pub fn top_k_hits(probs: &[f64], target: usize, k: usize) -> bool {
    let p = probs[target];
    let ahead = probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < target))
        .count();
    ahead < k
}

struct EpisodeResult {
    accuracy: f64,
    /// `(size, hit)` per query.
    queries: Vec<(Option<f64>, bool)>,
}

fn run_episodes(
    model: &ModelParams,
    corpus: &Corpus,
    opts: &EvalOptions,
) -> Result<Vec<EpisodeResult>> {
    if opts.top_k == 0 || opts.top_k > opts.spec.ways {
        return Err(Error::Spec(format!(
            "top_k = {} must lie in [1, ways = {}]",
            opts.top_k, opts.spec.ways
        )));
    }
    if opts.episodes == 0 {
        return Err(Error::Spec("evaluation needs at least one episode".into()));
    }
    let sampler = EpisodeSampler::test(corpus)?;
    (0..opts.episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ EVAL_SALT);
            rng.set_stream(i as u64);
            let mut noise = ChaCha8Rng::seed_from_u64(opts.seed ^ NOISE_SALT);
            noise.set_stream(i as u64);
            let ep = sampler.sample_paired(&opts.spec, &mut rng, &mut noise)?;
            let out = forward_episode(&ep, model, &corpus.words)?;
            let queries: Vec<(Option<f64>, bool)> = ep
                .queries()
                .zip(&out.targets)
                .enumerate()
                .map(|(q, (inst, &t))| {
                    (
                        inst.size,
                        top_k_hits(out.probabilities.row_slice(q), t, opts.top_k),
                    )
                })
                .collect();
            let hits = queries.iter().filter(|(_, h)| *h).count();
            Ok(EpisodeResult {
                accuracy: hits as f64 / queries.len() as f64,
                queries,
            })
        })
        .collect()
}

/// Top-k accuracy over `opts.episodes` test episodes. Episode `i` is drawn
/// from its own seeded stream, so results do not depend on scheduling.
pub fn evaluate(model: &ModelParams, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport> {
    let per_episode: Vec<f64> = run_episodes(model, corpus, opts)?
        .into_iter()
        .map(|r| r.accuracy)
        .collect();
    let (mean, ci) = ci95(&per_episode);
    Ok(EvalReport {
        variant: model.variant(),
        spec: opts.spec.clone(),
        mean,
        ci95: ci,
        top_k: opts.top_k,
        n_episodes: opts.episodes,
        seed: opts.seed,
        per_episode,
    })
}

/// One report per noise level, all on the same episodes.
pub fn noise_sweep(
    model: &ModelParams,
    corpus: &Corpus,
    opts: &EvalOptions,
    grid: &[f64],
) -> Result<Vec<EvalReport>> {
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Spec(format!("noise level {p} outside [0, 1]")));
    }
    grid.iter()
        .map(|&p| {
            let mut o = opts.clone();
            o.spec.p_noise = p;
            evaluate(model, corpus, &o)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub lower: f64,
    pub upper: f64,
    pub n_queries: usize,
    /// Episodes with at least one query in the bin.
    pub n_episodes: usize,
    /// Absent when no query fell in the bin.
    pub mean: Option<f64>,
    pub ci95: Option<f64>,
}

/// Accuracy restricted to queries whose size lies in each bin. Bins are
/// `[edges[i], edges[i+1])`, the last one closed.
pub fn strata_eval(
    model: &ModelParams,
    corpus: &Corpus,
    opts: &EvalOptions,
    edges: &[f64],
) -> Result<Vec<StratumReport>> {
    if edges.len() < 2
        || edges
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::Spec(format!(
            "bin edges {edges:?} must be strictly increasing"
        )));
    }
    let results = run_episodes(model, corpus, opts)?;
    let n_bins = edges.len() - 1;
    let bin_of = |s: f64| -> Option<usize> {
        (0..n_bins).find(|&b| {
            edges[b] <= s && (s < edges[b + 1] || (b + 1 == n_bins && s <= edges[b + 1]))
        })
    };
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut counts = vec![0usize; n_bins];
    for r in &results {
        let mut hits = vec![0usize; n_bins];
        let mut seen = vec![0usize; n_bins];
        for &(size, hit) in &r.queries {
            let size = size.ok_or_else(|| {
                Error::Contract("size-stratified evaluation needs size metadata".into())
            })?;
            if let Some(b) = bin_of(size) {
                seen[b] += 1;
                hits[b] += usize::from(hit);
            }
        }
        for b in 0..n_bins {
            if seen[b] > 0 {
                per_bin[b].push(hits[b] as f64 / seen[b] as f64);
                counts[b] += seen[b];
            }
        }
    }
    Ok((0..n_bins)
        .map(|b| {
            let (mean, ci) = ci95(&per_bin[b]);
            let present = !per_bin[b].is_empty();
            StratumReport {
                lower: edges[b],
                upper: edges[b + 1],
                n_queries: counts[b],
                n_episodes: per_bin[b].len(),
                mean: present.then_some(mean),
                ci95: present.then_some(ci),
            }
        })
        .collect())
}

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::Rng;

use crate::context::{inject_noise, select_context, ContextSource, NoiseVocab};
use crate::error::{Error, Result};
use crate::synthcorpus::{Corpus, SceneInstance};

use super::EpisodeSpec;

/// An M-way K-shot task. Instances are copies whose contexts have already
/// been filtered by source and, if requested, corrupted with label noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub roster: Vec<String>,
    /// `support[k]` holds the K support instances of `roster[k]`.
    pub support: Vec<Vec<SceneInstance>>,
    pub query: Vec<Vec<SceneInstance>>,
    /// Corpus indices of the support and query instances.
    pub support_ids: Vec<Vec<usize>>,
    pub query_ids: Vec<Vec<usize>>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.roster.len()
    }

    pub fn n_support(&self) -> usize {
        self.support.iter().map(Vec::len).sum()
    }

    pub fn n_query(&self) -> usize {
        self.query.iter().map(Vec::len).sum()
    }

    /// Roster index of every query, in flattened order.
    pub fn query_targets(&self) -> Vec<usize> {
        self.query
            .iter()
            .enumerate()
            .flat_map(|(k, q)| std::iter::repeat_n(k, q.len()))
            .collect()
    }

    pub fn queries(&self) -> impl Iterator<Item = &SceneInstance> {
        self.query.iter().flatten()
    }

    pub fn supports(&self) -> impl Iterator<Item = &SceneInstance> {
        self.support.iter().flatten()
    }
}

/// Draws episodes from a fixed pool of focal classes of one corpus.
#[derive(Clone, Debug)]
pub struct EpisodeSampler<'a> {
    corpus: &'a Corpus,
    pool: Vec<String>,
    by_class: Vec<Vec<usize>>,
    train: HashSet<String>,
    test: HashSet<String>,
    vocab: HashMap<ContextSource, NoiseVocab>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(corpus: &'a Corpus, pool: &[String]) -> Result<Self> {
        let position: HashMap<&str, usize> = pool
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut by_class = vec![Vec::new(); pool.len()];
        for (i, inst) in corpus.instances.iter().enumerate() {
            if let Some(&k) = position.get(inst.class.as_str()) {
                by_class[k].push(i);
            }
        }
        if let Some((c, _)) = pool.iter().zip(&by_class).find(|(_, ids)| ids.is_empty()) {
            return Err(Error::Sampling(format!(
                "class {c:?} has no instances in the corpus"
            )));
        }
        let vocab = ContextSource::ALL
            .into_iter()
            .map(|s| {
                let words = match s {
                    ContextSource::Cs => corpus.train.clone(),
                    ContextSource::Ct => corpus.test.clone(),
                    ContextSource::Union => corpus.classes.clone(),
                };
                (s, NoiseVocab::new(words))
            })
            .collect();
        Ok(EpisodeSampler {
            corpus,
            pool: pool.to_vec(),
            by_class,
            train: corpus.train_set(),
            test: corpus.test_set(),
            vocab,
        })
    }

    /// Sampler over the corpus's training classes.
    pub fn train(corpus: &'a Corpus) -> Result<Self> {
        EpisodeSampler::new(corpus, &corpus.train)
    }

    /// Sampler over the corpus's test classes.
    pub fn test(corpus: &'a Corpus) -> Result<Self> {
        EpisodeSampler::new(corpus, &corpus.test)
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }

    pub fn sample(&self, spec: &EpisodeSpec, rng: &mut impl Rng) -> Result<Episode> {
        let (roster, support_ids, query_ids) = self.draw(spec, rng)?;
        self.assemble(spec, roster, support_ids, query_ids, rng)
    }

    /// Structure comes from `rng`, label noise from `noise_rng`, so episodes
    /// drawn with equal `rng` states agree across noise levels.
    pub fn sample_paired(
        &self,
        spec: &EpisodeSpec,
        rng: &mut impl Rng,
        noise_rng: &mut impl Rng,
    ) -> Result<Episode> {
        let (roster, support_ids, query_ids) = self.draw(spec, rng)?;
        self.assemble(spec, roster, support_ids, query_ids, noise_rng)
    }

    #[allow(clippy::type_complexity)]
    fn draw(
        &self,
        spec: &EpisodeSpec,
        rng: &mut impl Rng,
    ) -> Result<(Vec<usize>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        spec.validate()?;
        let need = spec.shots + spec.queries;
        let eligible: Vec<usize> = (0..self.pool.len())
            .filter(|&k| self.by_class[k].len() >= need)
            .collect();
        if eligible.len() < spec.ways {
            return Err(Error::Sampling(format!(
                "{}-way {}-shot with {} queries needs {} classes with at least {need} instances; \
                 {} of {} pool classes qualify",
                spec.ways,
                spec.shots,
                spec.queries,
                spec.ways,
                eligible.len(),
                self.pool.len()
            )));
        }
        let roster: Vec<usize> = index::sample(rng, eligible.len(), spec.ways)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        let mut support = Vec::with_capacity(spec.ways);
        let mut query = Vec::with_capacity(spec.ways);
        for &k in &roster {
            let ids = &self.by_class[k];
            let picked: Vec<usize> = index::sample(rng, ids.len(), need)
                .into_iter()
                .map(|i| ids[i])
                .collect();
            support.push(picked[..spec.shots].to_vec());
            query.push(picked[spec.shots..].to_vec());
        }
        Ok((roster, support, query))
    }

    fn assemble(
        &self,
        spec: &EpisodeSpec,
        roster: Vec<usize>,
        support_ids: Vec<Vec<usize>>,
        query_ids: Vec<Vec<usize>>,
        noise_rng: &mut impl Rng,
    ) -> Result<Episode> {
        let vocab = &self.vocab[&spec.context_source];
        let mut prepare = |ids: &[usize]| -> Result<Vec<SceneInstance>> {
            ids.iter()
                .map(|&i| {
                    let src = &self.corpus.instances[i];
                    let kept =
                        select_context(&src.context, spec.context_source, &self.train, &self.test);
                    let context = inject_noise(&kept, spec.p_noise, vocab, noise_rng)?;
                    Ok(SceneInstance {
                        class: src.class.clone(),
                        features: src.features.clone(),
                        context,
                        size: src.size,
                    })
                })
                .collect()
        };
        let support = support_ids
            .iter()
            .map(|ids| prepare(ids))
            .collect::<Result<Vec<_>>>()?;
        let query = query_ids
            .iter()
            .map(|ids| prepare(ids))
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode {
            roster: roster.iter().map(|&k| self.pool[k].clone()).collect(),
            support,
            query,
            support_ids,
            query_ids,
        })
    }
}

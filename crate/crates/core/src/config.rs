//! Resolved run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episodic::{
    EpisodeSpec, EvalOptions, ModelConfig, ModelVariant, OptimConfig, TrainOptions,
};
use crate::error::{Error, Result};
use crate::synthcorpus::CorpusSpec;

/// Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    /// Existing corpus file; when absent the corpus is generated from `corpus`.
    pub corpus_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub variant: ModelVariant,
    pub episode: EpisodeSpec,
    pub optim: OptimConfig,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub top_k: usize,
    /// Seeds parameter initialisation, training episodes and evaluation episodes.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        RunConfig {
            model: ModelConfig::with_dims(corpus.d_f, 64, corpus.d_w),
            corpus,
            corpus_path: None,
            variant: ModelVariant::Full,
            episode: EpisodeSpec::default(),
            optim: OptimConfig::default(),
            train_episodes: 2000,
            eval_episodes: 600,
            top_k: 1,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// The 30,000 / 4,000 episode budget.
    pub fn full_scale(mut self) -> Self {
        self.train_episodes = 30_000;
        self.eval_episodes = 4_000;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus
            .validate()
            .map_err(|e| Error::Config(format!("corpus: {e}")))?;
        self.model.validate()?;
        self.episode
            .validate()
            .map_err(|e| Error::Config(format!("episode: {e}")))?;
        if self.corpus_path.is_none()
            && (self.corpus.d_f != self.model.d_f || self.corpus.d_w != self.model.d_w)
        {
            return Err(Error::Config(format!(
                "corpus dimensions (d_f {}, d_w {}) differ from model (d_f {}, d_w {})",
                self.corpus.d_f, self.corpus.d_w, self.model.d_f, self.model.d_w
            )));
        }
        if self.top_k == 0 || self.top_k > self.episode.ways {
            return Err(Error::Config(format!(
                "top_k = {} must lie in [1, ways = {}]",
                self.top_k, self.episode.ways
            )));
        }
        let o = &self.optim;
        if !(o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            spec: self.episode.clone(),
            episodes: self.train_episodes,
            optim: self.optim.clone(),
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            spec: self.episode.clone(),
            episodes: self.eval_episodes,
            top_k: self.top_k,
            seed: self.seed,
        }
    }
}

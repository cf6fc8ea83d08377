//! Episode sampling, the six model variants, training and evaluation.

mod eval;
mod model;
mod sampler;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::ContextSource;
use crate::error::{Error, Result};

pub use eval::{
    ci95, evaluate, noise_sweep, strata_eval, top_k_hits, EvalOptions, EvalReport, StratumReport,
};
pub use model::{
    distribution_from_distances, episode_loss, forward_episode, Embeddings, EpisodeOutput,
    ModelConfig, ModelParams, Network,
};
pub use sampler::{Episode, EpisodeSampler};
pub use train::{lr_at, train, AdamState, OptimConfig, TrainOptions, TrainOutcome};

/// Shape of one few-shot task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub context_source: ContextSource,
    pub p_noise: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: 15,
            context_source: ContextSource::Union,
            p_noise: 0.0,
        }
    }
}

impl EpisodeSpec {
    pub fn new(ways: usize, shots: usize) -> Self {
        EpisodeSpec {
            ways,
            shots,
            ..EpisodeSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 || self.shots < 1 || self.queries < 1 {
            return Err(Error::Spec(format!(
                "episode needs ways >= 2, shots >= 1, queries >= 1; got {}-way {}-shot {} queries",
                self.ways, self.shots, self.queries
            )));
        }
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::Spec(format!(
                "p_noise = {} outside [0, 1]",
                self.p_noise
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextAttention {
    Average,
    Ccam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelVariant {
    ProtoNet,
    AM3Proto,
    ProtoCavg,
    ProtoCCAM,
    ProtoCavgW2V,
    Full,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::ProtoNet,
        ModelVariant::AM3Proto,
        ModelVariant::ProtoCavg,
        ModelVariant::ProtoCCAM,
        ModelVariant::ProtoCavgW2V,
        ModelVariant::Full,
    ];

    /// Support-side context pooling, if context is used at all.
    pub fn context_attention(self) -> Option<ContextAttention> {
        match self {
            ModelVariant::ProtoNet | ModelVariant::AM3Proto => None,
            ModelVariant::ProtoCavg | ModelVariant::ProtoCavgW2V => Some(ContextAttention::Average),
            ModelVariant::ProtoCCAM | ModelVariant::Full => Some(ContextAttention::Ccam),
        }
    }

    pub fn uses_context(self) -> bool {
        self.context_attention().is_some()
    }

    pub fn uses_word_refine(self) -> bool {
        matches!(
            self,
            ModelVariant::AM3Proto | ModelVariant::ProtoCavgW2V | ModelVariant::Full
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::ProtoNet => "protonet",
            ModelVariant::AM3Proto => "am3-proto",
            ModelVariant::ProtoCavg => "proto-cavg",
            ModelVariant::ProtoCCAM => "proto-ccam",
            ModelVariant::ProtoCavgW2V => "proto-cavg-w2v",
            ModelVariant::Full => "full",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<ModelVariant> for String {
    fn from(v: ModelVariant) -> String {
        v.name().to_string()
    }
}

impl TryFrom<String> for ModelVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        ModelVariant::ALL
            .into_iter()
            .find(|v| {
                let canon: String = v.name().chars().filter(|c| *c != '-').collect();
                canon == key || format!("{v:?}").to_ascii_lowercase() == key
            })
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected one of {})",
                    ModelVariant::ALL.map(ModelVariant::name).join(", ")
                ))
            })
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::synthcorpus::Corpus;

use super::{EpisodeSampler, EpisodeSpec, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier applied at each phase boundary.
    pub decay: f64,
    /// Number of equal-length phases the run is split into.
    pub phases: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.1,
            phases: 3,
        }
    }
}

/// Learning rate for `episode` of a run of `total` episodes: the base rate
/// times `decay^phase`, where phase `p` covers episodes
/// `[p * total / phases, (p + 1) * total / phases)`.
pub fn lr_at(cfg: &OptimConfig, episode: usize, total: usize) -> f64 {
    if total == 0 || cfg.phases <= 1 {
        return cfg.lr;
    }
    let phase =
        ((episode as u128 * cfg.phases as u128) / total as u128).min(cfg.phases as u128 - 1);
    cfg.lr * cfg.decay.powi(phase as i32)
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update from the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamSet, cfg: &OptimConfig, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                *w -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub spec: EpisodeSpec,
    pub episodes: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            spec: EpisodeSpec::default(),
            episodes: 2000,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub loss_curve: Vec<f64>,
    pub lr_curve: Vec<f64>,
}

/// Sequential episodic training on the corpus's training classes.
pub fn train(
    model: &mut ModelParams,
    corpus: &Corpus,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let sampler = EpisodeSampler::train(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(0x0074_7261_696e);
    let mut adam = AdamState::new(&model.params);
    let mut loss_curve = Vec::with_capacity(opts.episodes);
    let mut lr_curve = Vec::with_capacity(opts.episodes);
    for e in 0..opts.episodes {
        let ep = sampler.sample(&opts.spec, &mut rng)?;
        let non_finite = |model: &ModelParams| Error::NonFinite {
            episode: e,
            param_norm: model.params.norm(),
        };
        let (loss, grads) = match model.loss_and_grads(&ep, &corpus.words) {
            Ok(r) => r,
            // Non-finite activations surface as domain errors in the softmax.
            Err(Error::Domain(_)) => return Err(non_finite(model)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
            return Err(non_finite(model));
        }
        model.params.zero_grad();
        model.params.accumulate(&grads);
        let lr = lr_at(&opts.optim, e, opts.episodes);
        adam.step(&mut model.params, &opts.optim, lr);
        loss_curve.push(loss);
        lr_curve.push(lr);
    }
    Ok(TrainOutcome {
        loss_curve,
        lr_curve,
    })
}

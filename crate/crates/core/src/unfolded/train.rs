//! Unsupervised training of the unrolled network.
//!
//! Offline mode draws fresh deployments and fading every batch and takes
//! one Adam step per batch; online mode adapts the parameters to a single
//! channel realization (a batch of one) before allocating on it.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    adam_step, backward, forward_power, init_params, AdamState, P0Rule, UnfoldedArch,
    UnfoldedParams,
};
use crate::channel::{sample_batch, DeploymentSource, PropagationParams, ScenarioSpec};
use crate::error::{Error, Result};
use crate::objective::PowerVector;

/// How online adaptation distributes its optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineSchedule {
    /// Every step updates all layers through the full unroll (default).
    WholeUnroll,
    /// Steps cycle through the layers, updating one layer at a time.
    LayerWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Number of offline batches (= optimizer steps).
    pub n_batches: usize,
    pub online_steps: usize,
    /// Step size the delta coefficients start from.
    pub init_step_size: f64,
    pub seed: u64,
    pub online_schedule: OnlineSchedule,
    #[serde(default)]
    pub record_snapshots: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            optimizer_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            n_batches: 2000,
            online_steps: 20,
            init_step_size: 0.1,
            seed: 0,
            online_schedule: OnlineSchedule::WholeUnroll,
            record_snapshots: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be >= 1".into()));
        }
        if !(self.optimizer_lr.is_finite() && self.optimizer_lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.optimizer_lr must be positive, got {}",
                self.optimizer_lr
            )));
        }
        for (key, v) in [
            ("train.adam_beta1", self.adam_beta1),
            ("train.adam_beta2", self.adam_beta2),
        ] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{key} must lie in (0, 1), got {v}"
                )));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        if !(self.init_step_size.is_finite()
            && self.init_step_size > 0.0
            && self.init_step_size < 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "train.init_step_size must lie in (0, 1), got {}",
                self.init_step_size
            )));
        }
        Ok(())
    }
}

/// Loss curve and metadata of one training run. Wall-clock time is kept
/// out of emitted artifacts so reruns stay byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Negative mean sum rate per optimizer step.
    pub losses: Vec<f64>,
    pub snapshots: Option<Vec<UnfoldedParams>>,
    pub config: TrainConfig,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

/// Versioned on-disk form of trained parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedParamsDoc {
    pub version: String,
    pub params: UnfoldedParams,
    pub train_config: TrainConfig,
}

impl TrainedParamsDoc {
    pub fn new(params: UnfoldedParams, train_config: TrainConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            train_config,
        }
    }
}

/// Offline pretraining: `n_batches` Adam steps, each over a freshly drawn
/// batch of deployments and channels. Deterministic given the seed.
pub fn train_offline(
    cfg: &TrainConfig,
    arch: &UnfoldedArch,
    scenario: &ScenarioSpec,
    propagation: &PropagationParams,
    p_max_w: f64,
) -> Result<(UnfoldedParams, TrainHistory)> {
    cfg.validate()?;
    arch.validate()?;
    scenario.validate()?;
    propagation.validate()?;

    let started = Instant::now();
    let mut rng = crate::rng::master(cfg.seed);
    let mut params = init_params(arch, scenario.n_links, cfg.init_step_size, &mut rng)?;
    let mut state = AdamState::new(params.trainable_count());
    let mut losses = Vec::with_capacity(cfg.n_batches);
    let mut snapshots = cfg.record_snapshots.then(Vec::new);

    for _ in 0..cfg.n_batches {
        let batch = sample_batch(
            DeploymentSource::Redraw(scenario),
            propagation,
            cfg.batch_size,
            &mut rng,
        )?;
        let (loss_value, grads) = backward(&params, &batch, &P0Rule::MaxPower, p_max_w)?;
        adam_step(&mut params, &grads, &mut state, cfg)?;
        losses.push(loss_value);
        if let Some(s) = snapshots.as_mut() {
            s.push(params.clone());
        }
    }

    let history = TrainHistory {
        losses,
        snapshots,
        config: cfg.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((params, history))
}

/// Online adaptation to one channel realization: `online_steps` optimizer
/// steps on the batch-of-one loss, then the resulting allocation.
pub fn train_online(
    params: UnfoldedParams,
    h: &crate::channel::ChannelMatrix,
    cfg: &TrainConfig,
    p_max_w: f64,
) -> Result<(UnfoldedParams, PowerVector)> {
    cfg.validate()?;
    let mut params = params;
    let mut state = AdamState::new(params.trainable_count());
    let batch = std::slice::from_ref(h);

    for step in 0..cfg.online_steps {
        let (_, mut grads) = backward(&params, batch, &P0Rule::MaxPower, p_max_w)?;
        if cfg.online_schedule == OnlineSchedule::LayerWise {
            grads.mask_to_layer(step % params.n_layers);
        }
        adam_step(&mut params, &grads, &mut state, cfg)?;
    }

    let p0 = P0Rule::MaxPower.build(h.n_links(), p_max_w)?;
    let p = forward_power(&params, h, &p0)?;
    Ok((params, p))
}

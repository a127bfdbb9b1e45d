//! Mini-batch training with ADAM and per-epoch exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::weighted_mse_grad;
use super::network::{backward, forward, update_running_stats, Mode};
use super::params::{init_params, ModelParams};
use super::spec::{ModelSpec, Preset};
use crate::dataset::{assemble_batch, epoch_iter, patch_road_frequency, weight_interval, Batch, PatchSet};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Stream offset separating epoch shuffles from parameter initialization.
const EPOCH_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: Preset,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub t_max: u32,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: Preset::MiniFcn,
            learning_rate: 5e-4,
            lr_decay: 0.9,
            adam: AdamConfig::default(),
            epochs: 10,
            batch_size: 16,
            t_max: 4,
            lambda: 2.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("train.lr_decay", "must lie in (0, 1]"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("train.adam.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("train.adam.beta2", "must lie in [0, 1)"));
        }
        if !(a.epsilon > 0.0) {
            return Err(Error::config("train.adam.epsilon", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::config("train.lambda", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks `lambda` against the interval `[1, 1/f_road]`.
    pub fn validate_lambda(&self, f_road: f64) -> Result<()> {
        let (lo, hi) = weight_interval(f_road);
        if self.lambda < lo || self.lambda > hi {
            return Err(Error::config(
                "train.lambda",
                format!("{} is outside [{lo}, {hi}] for road frequency {f_road}", self.lambda),
            ));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        SplitMix64::derive(self.seed, EPOCH_STREAM + epoch as u64).next_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,lr,mean_loss,steps` with shortest round-trip number formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,mean_loss,steps\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.mean_loss, r.steps));
        }
        out
    }
}

/// Exclusive owner of a model under training.
pub struct Trainer {
    spec: ModelSpec,
    params: ModelParams<f32>,
    state: AdamState,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(spec: ModelSpec, cfg: TrainConfig) -> Result<Self> {
        let params = init_params(&spec, cfg.seed)?;
        Self::with_params(spec, params, cfg)
    }

    pub fn with_params(spec: ModelSpec, params: ModelParams<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        params.check_against(&spec)?;
        let state = AdamState::new(&params);
        Ok(Self {
            spec,
            params,
            state,
            cfg,
        })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.state
    }

    /// One forward/backward/update cycle; returns the batch loss before the update.
    pub fn step(&mut self, batch: &Batch<f32>, lr: f64) -> Result<f64> {
        let (pred, cache) = forward(&self.spec, &self.params, &batch.input, Mode::Train)?;
        let (loss, grad) = weighted_mse_grad(&pred, &batch.targets, self.cfg.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        let grads = backward(&self.spec, &self.params, &cache, grad)?;
        update_running_stats(&self.spec, &mut self.params, &cache)?;
        adam_step(&mut self.params, &grads, &mut self.state, lr, &self.cfg.adam);
        Ok(loss)
    }
}

pub fn train(spec: &ModelSpec, patches: &PatchSet, cfg: &TrainConfig) -> Result<(ModelParams<f32>, History)> {
    train_with(spec, patches, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    spec: &ModelSpec,
    patches: &PatchSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<f32>, History)> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::Empty("training set has no patches".into()));
    }
    if patches.t_max != cfg.t_max {
        return Err(Error::config(
            "train.t_max",
            format!("patches were built with t_max {}, config says {}", patches.t_max, cfg.t_max),
        ));
    }
    cfg.validate_lambda(patch_road_frequency(patches)?)?;
    spec.check_input(patches.patch_size, patches.patch_size)?;
    let mut trainer = Trainer::new(spec.clone(), cfg.clone())?;
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = epoch_iter(patches.len(), cfg.batch_size, cfg.epoch_seed(epoch))?;
        let mut total = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let batch = assemble_batch::<f32>(patches, idx)?;
            let loss = trainer.step(&batch, lr).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step}: {m}")),
                other => other,
            })?;
            total += loss;
        }
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: total / batches.len() as f64,
            steps: batches.len(),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((trainer.into_params(), history))
}

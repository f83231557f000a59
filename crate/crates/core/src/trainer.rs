//! Mini-batch training with a linearly decaying learning rate.
//!
//! Each epoch draws a fresh triplet set from a sampler seeded by
//! `(seed, epoch)` and shuffles it with a second derived seed, so the batch
//! used at any global step is a pure function of the configuration. That is
//! what makes resuming from a checkpoint match an uninterrupted run.

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{self, DsMode, LossBreakdown, LossConfig, TermMeans, THETA_INIT};
use crate::model::Model;
use crate::numcore::{ParamId, ParamStore};
use crate::sampler::{self, SamplerConfig, Triplet};

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LR: f64 = 5e-5;
pub const DEFAULT_EPOCHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss: LossConfig,
    /// Emit a step record every `log_every` steps (0 disables step records).
    pub log_every: u64,
    /// Run FITB on the dataset's questions after each epoch.
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            negatives: 1,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            loss: LossConfig::default(),
            log_every: 1,
            eval_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be >= 1".into()));
        }
        if !(self.loss.weight_decay >= 0.0 && self.loss.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be finite and >= 0".into()));
        }
        self.loss.weights.validate()
    }
}

/// `lr(t) = lr0 · (1 − t/T)`, no warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(lr0: f64, total_steps: u64) -> Self {
        LrSchedule { lr0, total_steps }
    }

    pub fn lr(&self, t: u64) -> f64 {
        if self.total_steps == 0 || t >= self.total_steps {
            return 0.0;
        }
        // (T − t) / T avoids the cancellation in 1 − t/T
        self.lr0 * ((self.total_steps - t) as f64 / self.total_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamSlot {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Updates only parameters touched since the last zeroing.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub(crate) slots: HashMap<ParamId, AdamSlot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer { kind, slots: HashMap::new() }
    }

    /// Applies one update with learning rate `lr` and zeroes gradients.
    /// `decay` adds `c · (θ − θ₀)` to the gradient of each listed parameter.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, decay: &dyn Fn(ParamId) -> Option<f64>) -> Result<()> {
        let touched = params.touched().to_vec();
        for &id in &touched {
            if let Some(bad) = params.grad(id).iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: 0,
                    detail: format!("non-finite gradient in {}[{bad}]", params.name(id)),
                });
            }
        }
        for &id in &touched {
            let c = decay(id);
            let (value, grad) = params.value_and_grad_mut(id);
            let grad: Vec<f64> = match c {
                Some(c) => grad.iter().zip(value.iter()).map(|(g, th)| g + c * (th - THETA_INIT)).collect(),
                None => grad.to_vec(),
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in value.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let slot = self.slots.entry(id).or_insert_with(|| AdamSlot {
                        t: 0,
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                    });
                    slot.t += 1;
                    let bc1 = 1.0 - beta1.powi(slot.t as i32);
                    let bc2 = 1.0 - beta2.powi(slot.t as i32);
                    for k in 0..grad.len() {
                        slot.m[k] = beta1 * slot.m[k] + (1.0 - beta1) * grad[k];
                        slot.v[k] = beta2 * slot.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                        let m_hat = slot.m[k] / bc1;
                        let v_hat = slot.v[k] / bc2;
                        value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(())
    }

    pub fn slots(&self) -> impl Iterator<Item = (ParamId, &AdamSlot)> {
        let mut ids: Vec<&ParamId> = self.slots.keys().collect();
        ids.sort();
        ids.into_iter().map(move |id| (*id, &self.slots[id]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: u64,
        lr: f64,
        #[serde(flatten)]
        mean: TermMeans,
        total: f64,
    },
    Epoch {
        epoch: u64,
        step: u64,
        mean_l_comp: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        fitb_accuracy: Option<f64>,
    },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, epoch: u64, salt: u64) -> u64 {
    splitmix(splitmix(seed ^ salt).wrapping_add(epoch))
}

/// Number of triplets the sampler emits per epoch.
pub fn triplets_per_epoch(dataset: &Dataset, negatives: usize) -> usize {
    dataset
        .outfits
        .iter()
        .map(|o| {
            let n = o.items.len();
            let mut pairs = 0;
            for a in 0..n {
                for p in 0..n {
                    if a != p && o.items[a].ty != o.items[p].ty {
                        pairs += 1;
                    }
                }
            }
            pairs * negatives
        })
        .sum()
}

/// The shuffled triplet list used during `epoch`.
pub fn epoch_triplets(dataset: &Dataset, cfg: &TrainConfig, epoch: u64) -> Result<Vec<Triplet>> {
    let scfg = SamplerConfig { negatives: cfg.negatives, seed: derive_seed(cfg.seed, epoch, 0x5A3F) };
    let mut triplets = sampler::sample_all(&dataset.outfits, &dataset.store, scfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, 0xC0FF));
    triplets.shuffle(&mut rng);
    Ok(triplets)
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    pub model: Model,
    cfg: TrainConfig,
    optimizer: Optimizer,
    step: u64,
    steps_per_epoch: u64,
    schedule: LrSchedule,
    epoch_cache: Option<(u64, Vec<Triplet>)>,
    frozen_ds: Option<(u64, Vec<f64>)>,
    log: Vec<LogRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, mut model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.encoder.input_dim() != dataset.dim() {
            return Err(Error::Config(format!(
                "model expects {} input features, dataset has {}",
                model.encoder.input_dim(),
                dataset.dim()
            )));
        }
        if cfg.loss.learned_scales {
            model.enable_loss_scales();
        }
        let per_epoch = triplets_per_epoch(dataset, cfg.negatives);
        if per_epoch == 0 {
            return Err(Error::InvalidInput("dataset yields no training triplets".into()));
        }
        let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size) as u64;
        let schedule = LrSchedule::new(cfg.lr, steps_per_epoch * cfg.epochs as u64);
        Ok(Trainer {
            dataset,
            model,
            optimizer: Optimizer::new(cfg.optimizer),
            cfg,
            step: 0,
            steps_per_epoch,
            schedule,
            epoch_cache: None,
            frozen_ds: None,
            log: Vec::new(),
        })
    }

    /// Restores a trainer from checkpointed state.
    pub fn resume(dataset: &'a Dataset, ckpt: crate::checkpoint::Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(dataset, ckpt.model, ckpt.train_config)?;
        if ckpt.optimizer.kind != t.cfg.optimizer {
            return Err(Error::Config("checkpoint optimizer differs from its train config".into()));
        }
        t.optimizer = ckpt.optimizer;
        t.step = ckpt.step;
        t.frozen_ds = ckpt.frozen_ds;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule
    }

    pub fn frozen_ds(&self) -> Option<&(u64, Vec<f64>)> {
        self.frozen_ds.as_ref()
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.total_steps
    }

    pub fn checkpoint(&self) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            train_config: self.cfg.clone(),
            step: self.step,
            frozen_ds: self.frozen_ds.clone(),
        }
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    fn ensure_epoch(&mut self, epoch: u64) -> Result<()> {
        if self.epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let triplets = epoch_triplets(self.dataset, &self.cfg, epoch)?;
            self.epoch_cache = Some((epoch, triplets));
        }
        if self.cfg.loss.satl
            && self.cfg.loss.ds_mode == DsMode::PerEpoch
            && self.frozen_ds.as_ref().is_none_or(|(e, _)| *e != epoch)
        {
            let triplets = &self.epoch_cache.as_ref().unwrap().1;
            let ds = losses::difficulty_scores(&self.model, &self.dataset.store, triplets, self.cfg.loss.margin)?;
            self.frozen_ds = Some((epoch, ds));
        }
        Ok(())
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        if self.is_done() {
            return Err(Error::Contract("training already finished".into()));
        }
        let epoch = self.step / self.steps_per_epoch;
        let b = (self.step % self.steps_per_epoch) as usize;
        self.ensure_epoch(epoch)?;
        let triplets = &self.epoch_cache.as_ref().unwrap().1;
        let lo = b * self.cfg.batch_size;
        let hi = (lo + self.cfg.batch_size).min(triplets.len());
        let batch = &triplets[lo..hi];
        let frozen = self.frozen_ds.as_ref().filter(|(e, _)| *e == epoch).map(|(_, ds)| &ds[lo..hi]);
        let frozen = if self.cfg.loss.ds_mode == DsMode::PerEpoch { frozen } else { None };

        self.model.params.zero_grad();
        let breakdown = losses::loss_and_backward(&mut self.model, &self.dataset.store, batch, &self.cfg.loss, frozen)?;
        if !breakdown.total.is_finite() {
            self.model.params.zero_grad();
            return Err(self.diagnose(&breakdown));
        }
        let lr = self.schedule.lr(self.step);
        let decay = self.cfg.loss.weight_decay;
        let weights = &self.model.triplet_weights;
        let decay_fn = |id: ParamId| (decay > 0.0 && weights.is_weight_param(id)).then_some(decay);
        let res = self.optimizer.step(&mut self.model.params, lr, &decay_fn);
        if let Err(Error::NonFiniteLoss { detail, .. }) = res {
            return Err(Error::NonFiniteLoss { step: self.step, detail });
        }
        res?;

        if self.cfg.log_every > 0 && self.step.is_multiple_of(self.cfg.log_every) {
            self.log.push(LogRecord::Step { step: self.step, epoch, lr, mean: breakdown.mean, total: breakdown.total });
        }
        debug!("step {} lr {lr:.3e} total {:.6}", self.step, breakdown.total);
        self.step += 1;
        if self.step.is_multiple_of(self.steps_per_epoch) {
            self.end_epoch(epoch)?;
        }
        Ok(breakdown)
    }

    fn end_epoch(&mut self, epoch: u64) -> Result<()> {
        let triplets = &self.epoch_cache.as_ref().unwrap().1;
        let mean_l_comp = mean_comp_loss(&self.model, &self.dataset.store, triplets, self.cfg.loss.margin.value())?;
        let fitb_accuracy = if self.cfg.eval_each_epoch && !self.dataset.fitb.is_empty() {
            let opts = eval::FitbOptions::default();
            Some(eval::fitb_eval(&self.dataset.fitb, &self.model, &self.dataset.store, &opts)?.accuracy)
        } else {
            None
        };
        info!("epoch {epoch} done at step {}: mean L_comp {mean_l_comp:.5}", self.step);
        self.log.push(LogRecord::Epoch { epoch, step: self.step, mean_l_comp, fitb_accuracy });
        Ok(())
    }

    fn diagnose(&self, b: &LossBreakdown) -> Error {
        let bad: Vec<String> = b
            .triplets
            .iter()
            .filter(|t| !t.total.is_finite())
            .take(5)
            .map(|t| {
                format!(
                    "({},{},{}) d_pos={} d_neg={} l_comp={} w={} l_sim={} l1={} l2={}",
                    t.key.anchor,
                    t.key.positive,
                    t.key.negative,
                    t.d_pos,
                    t.d_neg,
                    t.l_comp,
                    t.weight,
                    t.l_sim,
                    t.l_l1,
                    t.l_l2
                )
            })
            .collect();
        Error::NonFiniteLoss { step: self.step, detail: format!("total={} offending: {}", b.total, bad.join("; ")) }
    }

    /// Runs until `step` global steps have been taken (or training ends).
    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while self.step < step.min(self.schedule.total_steps) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.schedule.total_steps)
    }
}

/// Mean hinge `L_comp` of `triplets` under the current model.
pub fn mean_comp_loss(
    model: &Model,
    store: &crate::data::FeatureStore,
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let scores = losses::difficulty_scores(model, store, triplets, crate::losses::Margin::new(margin)?)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(5e-5, 1000);
        assert_eq!(s.lr(0), 5e-5);
        assert_eq!(s.lr(500), 2.5e-5);
        assert_eq!(s.lr(1000), 0.0);
    }

    #[test]
    fn sgd_zero_lr_is_noop_and_zeroes_grads() {
        let mut p = ParamStore::new();
        let id = p.add("x", vec![1.0, -2.0]);
        p.accumulate(id, &[3.0, 4.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        opt.step(&mut p, 0.0, &|_| None).unwrap();
        assert_eq!(p.value(id), &[1.0, -2.0]);
        assert!(p.all_grads_zero());
    }

    #[test]
    fn sgd_step_on_half_quadratic() {
        // f = θ²/2, ∇f = θ
        let mut p = ParamStore::new();
        let id = p.add("theta", vec![1.0]);
        let g = p.value(id).to_vec();
        p.accumulate(id, &g);
        Optimizer::new(OptimizerKind::Sgd).step(&mut p, 0.1, &|_| None).unwrap();
        assert!((p.value(id)[0] - 0.9).abs() < 1e-15);
        assert!(p.all_grads_zero());
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut p = ParamStore::new();
        let id = p.add("x", vec![1.0]);
        p.accumulate(id, &[f64::NAN]);
        let err = Optimizer::new(OptimizerKind::Sgd).step(&mut p, 0.1, &|_| None).unwrap_err();
        assert_eq!(err.kind(), "non-finite-loss");
        assert_eq!(p.value(id), &[1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let id = p.add("x", vec![0.5, 0.5]);
        p.accumulate(id, &[2.0, -0.01]);
        let mut opt = Optimizer::new(OptimizerKind::adam());
        opt.step(&mut p, 0.01, &|_| None).unwrap();
        assert!((p.value(id)[0] - 0.49).abs() < 1e-8);
        assert!((p.value(id)[1] - 0.51).abs() < 1e-6);
    }

    #[test]
    fn decay_pulls_theta_toward_init() {
        let mut p = ParamStore::new();
        let id = p.add("theta", vec![THETA_INIT + 1.0]);
        p.accumulate(id, &[0.0]);
        Optimizer::new(OptimizerKind::Sgd).step(&mut p, 0.5, &|_| Some(0.1)).unwrap();
        assert!((p.value(id)[0] - (THETA_INIT + 0.95)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.batch_size, d.lr, d.epochs), (128, 5e-5, 10));
        assert_eq!(d.loss.margin.value(), 0.3);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{graph_loss, Balance, LossBreakdown};
use super::metrics::{evaluate, MetricReport, ModelPredictor, DEFAULT_THRESHOLD};
use super::sample::{scene_seed, Sample};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_OCC_ANCHORS;
use crate::informer::{Informer, ModelInputs, ModelConfig};
use crate::numerics::{AdamWConfig, Checkpoint, GradBuffer, Graph, OptimizerState, ParamStore};
use crate::TOOL_VERSION;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub epochs: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation_steps: usize,
    pub occlusion_anchors: usize,
    pub balance: Balance,
    /// Global gradient-norm limit.
    pub grad_clip: Option<f64>,
    /// Minimum standard deviation (m) of the trajectory likelihood during
    /// training; see [`graph_loss`].
    pub sigma_floor: Option<f64>,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            epochs: 10,
            max_steps: None,
            batch_size: 20,
            accumulation_steps: 2,
            occlusion_anchors: DEFAULT_OCC_ANCHORS,
            balance: Balance::PerClass,
            grad_clip: None,
            sigma_floor: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.accumulation_steps == 0 {
            return Err(Error::Config("batch_size and accumulation_steps must be positive".into()));
        }
        if self.occlusion_anchors == 0 {
            return Err(Error::Config("occlusion_anchors must be positive".into()));
        }
        if !(self.optimizer.base_lr >= 0.0) || !(self.optimizer.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer.base_lr and weight_decay must be non-negative".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.sigma_floor.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_per_step(&self) -> usize {
        self.batch_size * self.accumulation_steps
    }

    pub fn steps_per_epoch(&self, dataset: usize) -> u64 {
        dataset.div_ceil(self.samples_per_step()).max(1) as u64
    }

    pub fn total_steps(&self, dataset: usize) -> u64 {
        let full = (self.epochs as u64).saturating_mul(self.steps_per_epoch(dataset));
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step { step: u64, epoch: u64, lr: f64, grad_norm: f64, loss: LossBreakdown },
    Validation { step: u64, epoch: u64, report: MetricReport },
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Informer,
    pub store: ParamStore<f32>,
    pub optimizer: OptimizerState,
    rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = Informer::new(config.model.clone(), &mut store, &mut rng)?;
        let optimizer = OptimizerState::new(config.optimizer.clone(), &store);
        Ok(Self { config, model, store, optimizer, rng, step: 0 })
    }

    /// Restores a run, including optimizer moments, RNG and step counter.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        let mut t = Self::new(config)?;
        t.store.load(ckpt.params.clone())?;
        if let Some(o) = &ckpt.optimizer {
            if o.first_moment.len() != t.store.len() {
                return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
            }
            t.optimizer = o.clone();
        }
        if let Some(r) = &ckpt.rng {
            t.rng = r.restore()?;
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(
            TOOL_VERSION,
            serde_json::to_value(&self.config)?,
            &self.store,
            Some(&self.optimizer),
            Some(&self.rng),
            self.step,
        ))
    }

    pub fn epoch(&self, dataset: usize) -> u64 {
        self.step / self.config.steps_per_epoch(dataset)
    }

    /// Dataset indices for optimizer step `step`: a stream of per-epoch
    /// shuffles, so the order depends only on the seed and the step.
    pub fn batch_indices(&self, step: u64, dataset: usize) -> Vec<usize> {
        let per = self.config.samples_per_step() as u64;
        let mut out = Vec::with_capacity(per as usize);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for q in step * per..(step + 1) * per {
            let epoch = q / dataset as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..dataset).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(self.config.seed, "shuffle", epoch)));
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().unwrap().1[(q % dataset as u64) as usize]);
        }
        out
    }

    fn sample_gradient(&self, s: &Sample, weight: f32) -> Result<(GradBuffer<f32>, LossBreakdown)> {
        let inputs = ModelInputs::new(&s.features)?;
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &self.store, &inputs, &s.anchor_positions())?;
        let (loss, breakdown) = graph_loss(&mut g, &self.model, &out, &s.anchors.anchors, self.config.balance, self.config.sigma_floor)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss { sample: s.scene_id.clone(), detail: format!("{breakdown:?}") });
        }
        let mut buf = self.store.new_grad_buffer();
        g.backward_into(loss, &mut buf)?;
        if !buf.all_finite() {
            return Err(Error::NonFiniteLoss { sample: s.scene_id.clone(), detail: "non-finite gradient".into() });
        }
        buf.scale(weight);
        Ok((buf, breakdown))
    }

    /// Loss of the current parameters on `samples`, averaged, without updating.
    pub fn mean_loss(&self, samples: &[&Sample]) -> Result<LossBreakdown> {
        let parts: Vec<Result<(GradBuffer<f32>, LossBreakdown)>> =
            crate::with_workers(|| samples.par_iter().map(|s| self.sample_gradient(s, 1.0)).collect());
        let mut mean = LossBreakdown::default();
        for p in parts {
            add_scaled(&mut mean, &p?.1, 1.0 / samples.len() as f64);
        }
        Ok(mean)
    }

    /// One optimizer step over `accumulation_steps` micro-batches taken from `samples`.
    pub fn train_step(&mut self, samples: &[Sample]) -> Result<LogRecord> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("training needs at least one sample".into()));
        }
        let idx = self.batch_indices(self.step, samples.len());
        let weight = 1.0 / idx.len() as f32;
        self.store.zero_grad();
        let mut mean = LossBreakdown::default();
        for micro in idx.chunks(self.config.batch_size) {
            let parts: Vec<Result<(GradBuffer<f32>, LossBreakdown)>> = crate::with_workers(|| {
                micro.par_iter().map(|&i| self.sample_gradient(&samples[i], weight)).collect()
            });
            // merged in sample order so the sum is independent of thread count
            let mut acc = self.store.new_grad_buffer();
            for p in parts {
                let (buf, b) = p?;
                acc.merge(&buf);
                add_scaled(&mut mean, &b, 1.0 / idx.len() as f64);
            }
            self.store.accumulate(&acc);
        }
        let grad_norm = self.store.grads().l2_norm();
        if let Some(clip) = self.config.grad_clip {
            if grad_norm > clip {
                self.store.grads_mut().scale((clip / grad_norm) as f32);
            }
        }
        let epoch = self.epoch(samples.len());
        let lr = self.optimizer.step(&mut self.store);
        self.step += 1;
        Ok(LogRecord::Step { step: self.step - 1, epoch, lr, grad_norm, loss: mean })
    }

    pub fn validate(&self, samples: &[Sample]) -> Result<MetricReport> {
        let p = ModelPredictor { model: &self.model, store: &self.store };
        evaluate(&p, samples, "single_occluder", self.config.threshold)
    }

    /// Runs to `total_steps`, validating and calling `on_epoch` at every epoch end.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_record: impl FnMut(&LogRecord) -> Result<()>,
        mut on_epoch: impl FnMut(&Trainer, u64) -> Result<()>,
    ) -> Result<()> {
        let total = self.config.total_steps(train.len());
        let per_epoch = self.config.steps_per_epoch(train.len());
        while self.step < total {
            let rec = self.train_step(train)?;
            on_record(&rec)?;
            if self.step.is_multiple_of(per_epoch) || self.step == total {
                let epoch = self.step.div_ceil(per_epoch);
                if !val.is_empty() {
                    let report = self.validate(val)?;
                    on_record(&LogRecord::Validation { step: self.step, epoch, report })?;
                }
                on_epoch(self, epoch)?;
            }
        }
        Ok(())
    }
}

fn add_scaled(acc: &mut LossBreakdown, b: &LossBreakdown, w: f64) {
    acc.nll_traj += w * b.nll_traj;
    acc.ce_mode += w * b.ce_mode;
    acc.bce_occ += w * b.bce_occ;
    acc.total += w * b.total;
    acc.occupied += b.occupied;
    acc.free += b.free;
}

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamW};
use super::loss::{LossBreakdown, LossConfig};
use crate::autodiff::Graph;
use crate::encoder::DualWeightTracker;
use crate::error::{Error, Result};
use crate::model::{Example, ReportModel};
use crate::parallel::{par_map, resolve_jobs};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Write a checkpoint every this many epochs; 0 means only at the end.
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Worker threads for per-sample graphs; 0 uses every core.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            jobs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            errs.push(format!("learning rate must be finite and >= 0, got {}", a.lr));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            errs.push("adam betas must lie in [0, 1)".into());
        }
        if !(a.eps > 0.0) {
            errs.push("adam eps must be positive".into());
        }
        if !(a.weight_decay >= 0.0) {
            errs.push("weight_decay must be >= 0".into());
        }
        errs
    }

    pub fn threads(&self) -> usize {
        resolve_jobs(self.jobs)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss1: f64,
    pub loss2: f64,
    pub loss_t: f64,
    pub total: f64,
    pub wall_time: f64,
}

struct SampleResult {
    loss: LossBreakdown,
    grads: Vec<Vec<f64>>,
    /// Per head, flattened.
    heads: Vec<Vec<f64>>,
}

fn sample_step(model: &ReportModel, ex: &Example, loss: &LossConfig, with_grads: bool) -> Result<SampleResult> {
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, with_grads)?;
    let f = model.forward(&mut g, &p, ex, model.dual_source(), loss)?;
    let b = LossBreakdown {
        loss1: g.scalar(f.loss1),
        loss2: g.scalar(f.loss2),
        loss_t: g.scalar(f.loss_t),
        total: g.scalar(f.total),
    };
    if !b.total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {}", b.total)));
    }
    let heads = f.encoder.heads.iter().map(|&h| g.value(h).to_vec()).collect();
    let grads = if with_grads {
        let grads = g.backward(f.total)?;
        let grads = model.store.collect_grads(&p, &grads);
        for ((_, name, _), gr) in model.store.iter().zip(&grads) {
            if gr.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        grads
    } else {
        Vec::new()
    };
    Ok(SampleResult { loss: b, grads, heads })
}

fn run_batch(
    model: &ReportModel,
    batch: &[&Example],
    loss: &LossConfig,
    with_grads: bool,
    threads: usize,
) -> Result<Vec<SampleResult>> {
    par_map(batch, threads, |ex| sample_step(model, ex, loss, with_grads))
}

/// Mean losses over `examples` without updating anything.
pub fn evaluate_loss(model: &ReportModel, examples: &[Example], loss: &LossConfig, threads: usize) -> Result<LossBreakdown> {
    if examples.is_empty() {
        return Err(Error::contract("no examples to evaluate"));
    }
    let refs: Vec<&Example> = examples.iter().collect();
    let mut total = LossBreakdown::default();
    for r in run_batch(model, &refs, loss, false, threads)? {
        total.accumulate(&r.loss);
    }
    Ok(total.scaled(1.0 / examples.len() as f64))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub tracker: DualWeightTracker,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &ReportModel) -> Result<Self> {
        let mut errs = config.validate();
        // The alpha sweep's top row (alpha = 10) is trainable.
        if let Err(e) = LossConfig::for_sweep(config.loss.lambda, config.loss.alpha) {
            errs.push(e.message());
        }
        if !errs.is_empty() {
            return Err(Error::config(errs.join("; ")));
        }
        let tensors: Vec<_> = model.store.iter().map(|(_, _, t)| t.clone()).collect();
        Ok(Self {
            optimizer: AdamW::new(config.adam, &tensors),
            tracker: DualWeightTracker::with_state(model.dual_state.clone()),
            config,
        })
    }

    /// One optimizer step on the mean gradient of `batch`. Returns the
    /// mean pre-update losses.
    pub fn train_batch(&mut self, model: &mut ReportModel, batch: &[&Example]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        model.dual_state = self.tracker.begin_iteration(model.head_weights())?;
        let results = run_batch(model, batch, &self.config.loss, true, self.config.threads())?;
        let k = 1.0 / batch.len() as f64;
        let mut mean: Vec<Vec<f64>> = results[0].grads.iter().map(|g| vec![0.0; g.len()]).collect();
        let mut loss = LossBreakdown::default();
        let mut heads = Vec::with_capacity(results.len());
        for r in results {
            for (acc, g) in mean.iter_mut().zip(&r.grads) {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            loss.accumulate(&r.loss);
            heads.push(r.heads);
        }
        for acc in &mut mean {
            for a in acc.iter_mut() {
                *a *= k;
            }
        }
        self.optimizer.update(model.store.tensors_mut(), &mean)?;
        for (_, name, t) in model.store.iter() {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name} after update")));
            }
        }
        self.tracker.end_iteration(heads);
        Ok(loss.scaled(k))
    }

    /// Shuffled pass over `examples`. The order depends only on the seed and
    /// the epoch index.
    pub fn train_epoch(&mut self, model: &mut ReportModel, examples: &[Example], epoch: usize) -> Result<EpochRecord> {
        if examples.is_empty() {
            return Err(Error::contract("no training examples"));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        SplitMix64::derive(self.config.seed, epoch as u64).shuffle(&mut order);
        let mut total = LossBreakdown::default();
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let l = self.train_batch(model, &batch)?;
            total.accumulate(&l.scaled(batch.len() as f64));
        }
        let m = total.scaled(1.0 / examples.len() as f64);
        Ok(EpochRecord {
            epoch,
            loss1: m.loss1,
            loss2: m.loss2,
            loss_t: m.loss_t,
            total: m.total,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    /// Train for `config.epochs`, calling `on_epoch` after each one.
    pub fn fit<F>(&mut self, model: &mut ReportModel, examples: &[Example], mut on_epoch: F) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&EpochRecord, &ReportModel) -> Result<()>,
    {
        let mut log = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            let r = self.train_epoch(model, examples, epoch)?;
            on_epoch(&r, model)?;
            log.push(r);
        }
        Ok(log)
    }
}

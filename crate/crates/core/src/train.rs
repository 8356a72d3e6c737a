//! AdamW, the mini-batch loop and progressive fine-tuning.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use crate::autodiff::bce_with_logits_value as bce_with_logits;
use crate::degrade::DegradationLevel;
use crate::error::{Error, Result, ResultExt};
use crate::model::{loss_and_gradients, Checkpoint, Mode, ModelParams, ParamKind};
use crate::record::RecordSource;
use crate::rng::{self, tags};

pub const ADAM_EPSILON: f32 = 1e-8;

/// Records whose gradients are summed sequentially before being combined
/// with other chunks. Fixed so results do not depend on the thread count.
const GRADIENT_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPSILON,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    /// `lr = 0` is allowed here so a frozen step can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::config(format!(
                "betas must satisfy 0 < b1 < b2 < 1, got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// First and second moments plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new()
    }
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState {
            m: ModelParams::zeros(),
            v: ModelParams::zeros(),
            t: 0,
        }
    }

    pub fn from_parts(m: ModelParams, v: ModelParams, t: u64) -> Result<Self> {
        if !m.is_finite() || !v.is_finite() {
            return Err(Error::numeric("optimizer moments must be finite"));
        }
        if v.iter().any(|(_, t)| t.data().iter().any(|&x| x < 0.0)) {
            return Err(Error::numeric("second moment must be non-negative"));
        }
        Ok(OptimizerState { m, v, t })
    }

    pub fn first_moment(&self) -> &ModelParams {
        &self.m
    }

    pub fn second_moment(&self) -> &ModelParams {
        &self.v
    }

    pub fn step(&self) -> u64 {
        self.t
    }
}

/// One AdamW update. Weight decay is decoupled and skipped for biases.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    cfg.validate()?;
    if !grads.is_finite() {
        return Err(Error::numeric(
            "non-finite gradient passed to the optimizer",
        ));
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let c2 = 1.0 - (cfg.beta2 as f64).powf(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);

    for (id, theta) in params.iter_mut() {
        let decay = match id.spec().kind {
            ParamKind::Weight { .. } => cfg.weight_decay,
            ParamKind::Bias => 0.0,
        };
        let g = grads[id].data();
        let m = state.m[id].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state.v[id].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.m[id].data(), state.v[id].data());
        for ((p, &mi), &vi) in theta.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi as f64 / c1;
            let v_hat = vi as f64 / c2;
            let update = m_hat / (v_hat.sqrt() + cfg.eps as f64) + decay as f64 * *p as f64;
            *p = (*p as f64 - cfg.lr as f64 * update) as f32;
        }
    }
    if !params.is_finite() {
        return Err(Error::numeric(format!(
            "parameters became non-finite at step {}",
            state.t
        )));
    }
    Ok(())
}

/// Overrides applied for each progressive fine-tuning stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-5,
            batch_size: 16,
            epochs: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub finetune: FinetuneConfig,
    pub stages: Vec<DegradationLevel>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        TrainConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            weight_decay: adam.weight_decay,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            finetune: FinetuneConfig::default(),
            stages: crate::degrade::CANONICAL_LEVELS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.finetune.lr > 0.0) {
            return Err(Error::config(format!(
                "fine-tune learning rate must be > 0, got {}",
                self.finetune.lr
            )));
        }
        if self.batch_size == 0 || self.finetune.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.adamw().validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: ADAM_EPSILON,
            weight_decay: self.weight_decay,
        }
    }

    /// The configuration a fine-tuning stage trains with.
    pub fn for_finetune(&self) -> TrainConfig {
        TrainConfig {
            lr: self.finetune.lr,
            batch_size: self.finetune.batch_size,
            epochs: self.finetune.epochs,
            ..self.clone()
        }
    }
}

/// Identifies an epoch within a run; stage 0 is base training, stage `k`
/// the k-th fine-tuning stage. Shuffle and dropout streams are keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochKey {
    pub stage: u64,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub stage: u64,
    pub epoch: u64,
    /// Mean of the per-batch mean losses.
    pub loss: f32,
    pub wall: Duration,
}

/// The seeded visiting order of one epoch.
pub fn epoch_order(len: usize, seed: u64, key: EpochKey) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(
        seed,
        tags::SHUFFLE,
        &[key.stage, key.epoch],
    ));
    order
}

fn chunk_gradient<S: RecordSource + ?Sized>(
    source: &S,
    params: &ModelParams,
    seed: u64,
    key: EpochKey,
    batch: u64,
    chunk: &[(usize, usize)],
) -> Result<(ModelParams, f64)> {
    let mut sum = ModelParams::zeros();
    let mut loss = 0f64;
    for &(position, index) in chunk {
        let record = source.record(index)?;
        let mut r = rng::stream(
            seed,
            tags::DROPOUT,
            &[key.stage, key.epoch, batch, position as u64],
        );
        let g = loss_and_gradients(&record, params, Mode::Training(&mut r))
            .with_context(|| format!("record {index}"))?;
        sum.add_assign(&g.grads)?;
        loss += g.loss as f64;
    }
    Ok((sum, loss))
}

/// One pass over `source` in seeded mini-batches. The last partial batch is
/// kept and averaged over its actual size.
pub fn train_epoch<S: RecordSource + ?Sized>(
    source: &S,
    params: &mut ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    key: EpochKey,
) -> Result<EpochReport> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    cfg.adamw().validate()?;
    if source.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let start = Instant::now();
    let adam = cfg.adamw();
    let order = epoch_order(source.len(), cfg.seed, key);
    let mut batch_losses = Vec::new();

    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let positioned: Vec<(usize, usize)> = batch.iter().copied().enumerate().collect();
        let frozen: &ModelParams = params;
        let parts = positioned
            .par_chunks(GRADIENT_CHUNK)
            .map(|chunk| chunk_gradient(source, frozen, cfg.seed, key, b as u64, chunk))
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("stage {} epoch {} batch {b}", key.stage, key.epoch))?;

        let mut grads = ModelParams::zeros();
        let mut loss = 0f64;
        for (g, l) in &parts {
            grads.add_assign(g)?;
            loss += l;
        }
        drop(parts);
        grads.scale(1.0 / batch.len() as f32);
        adamw_step(params, &grads, state, &adam)
            .with_context(|| format!("stage {} epoch {} batch {b}", key.stage, key.epoch))?;
        batch_losses.push(loss / batch.len() as f64);
    }

    let loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
    Ok(EpochReport {
        stage: key.stage,
        epoch: key.epoch,
        loss: loss as f32,
        wall: start.elapsed(),
    })
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each.
pub fn train<S: RecordSource + ?Sized>(
    source: &S,
    params: &mut ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    stage: u64,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<Vec<EpochReport>> {
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        let report = train_epoch(source, params, state, cfg, EpochKey { stage, epoch })?;
        log::info!(
            "stage {} epoch {} loss {:.6} ({:.1}s)",
            report.stage,
            report.epoch,
            report.loss,
            report.wall.as_secs_f64()
        );
        on_epoch(&report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// CSV metrics log: `stage,epoch,loss,wall_seconds`.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "stage,epoch,loss,wall_seconds")?;
        Ok(MetricsLog { out })
    }

    pub fn record(&mut self, r: &EpochReport) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{:.3}",
            r.stage,
            r.epoch,
            r.loss,
            r.wall.as_secs_f64()
        )?;
        self.out.flush()?;
        Ok(())
    }
}

/// Supplies the training set for a degradation level.
pub trait StageData {
    fn degraded(&self, level: DegradationLevel) -> Result<Box<dyn RecordSource + '_>>;
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub level: DegradationLevel,
    /// The weights the stage started from.
    pub initial: ModelParams,
    pub checkpoint: Checkpoint,
    pub reports: Vec<EpochReport>,
}

/// Fine-tunes through `stages` in order, each stage starting from the
/// previous stage's final weights with fresh optimizer moments.
pub fn progressive_finetune(
    base: Option<&Checkpoint>,
    stages: &[DegradationLevel],
    data: &dyn StageData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<Vec<StageOutcome>> {
    let base =
        base.ok_or_else(|| Error::config("progressive fine-tuning needs a base checkpoint"))?;
    let stage_cfg = cfg.for_finetune();
    stage_cfg.validate()?;
    let mut params = base.params.clone();
    let mut outcomes = Vec::with_capacity(stages.len());
    for (k, &level) in stages.iter().enumerate() {
        let stage = k as u64 + 1;
        let source = data
            .degraded(level)
            .with_context(|| format!("preparing stage {stage} data at level {level}"))?;
        let initial = params.clone();
        let mut state = OptimizerState::new();
        let reports = train(
            source.as_ref(),
            &mut params,
            &mut state,
            &stage_cfg,
            stage,
            &mut on_epoch,
        )?;
        outcomes.push(StageOutcome {
            level,
            initial,
            checkpoint: Checkpoint {
                params: params.clone(),
                optimizer: Some(state),
            },
            reports,
        });
    }
    Ok(outcomes)
}

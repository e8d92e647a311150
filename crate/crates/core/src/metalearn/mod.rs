//! MAML: functional inner-loop SGD on a support set and a meta-update of the
//! shared initialization from query losses.
//!
//! Second-order meta-gradients are exact. Writing the inner loop as
//! `θ_{k+1} = θ_k - α M ∇L_s(θ_k)` with `M` the trainable mask, the gradient
//! of `L_q(θ_m)` with respect to `θ_0` is obtained by pulling
//! `v = ∇L_q(θ_m)` back through each step as `v ← v - α H(θ_k) (M v)`, where
//! the Hessian-vector product comes from forward-over-reverse differentiation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hessian_vector_product, loss_and_grad, Differentiable};
use crate::corpus::{sample_task_batch, TaskBatch};
use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::lang::LangCode;
use crate::optim::{AdamWConfig, Optimizer, OptimizerKind};
use crate::params::{Grads, ParameterSet, TrainableMask};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    First,
    #[default]
    Second,
}

impl core::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Order::First),
            "second" => Ok(Order::Second),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner-loop SGD learning rate.
    pub alpha: f64,
    /// Outer-loop learning rate.
    pub beta: f64,
    /// Inner steps per task.
    pub m: usize,
    pub batch_size: usize,
    pub tasks_per_meta_batch: usize,
    pub support_fraction: f64,
    pub epochs: usize,
    pub order: Order,
    pub outer_optimizer: OptimizerKind,
    pub weight_decay: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 1e-4,
            beta: 1e-5,
            m: 2,
            batch_size: 8,
            tasks_per_meta_batch: 4,
            support_fraction: 0.5,
            epochs: 10,
            order: Order::Second,
            outer_optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(alloc::format!("meta config: {what}")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.tasks_per_meta_batch == 0 {
            return bad("tasks_per_meta_batch must be positive");
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return bad("support_fraction outside (0, 1)");
        }
        Ok(())
    }

    pub fn outer(&self) -> Optimizer {
        match self.outer_optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.beta),
            OptimizerKind::AdamW => Optimizer::adamw(
                self.beta,
                AdamWConfig {
                    weight_decay: self.weight_decay,
                    ..AdamWConfig::default()
                },
            ),
        }
    }

    /// Meta-batches per epoch: enough to visit every example once in
    /// expectation.
    pub fn iterations_per_epoch(&self, total_examples: usize) -> usize {
        let per = self.tasks_per_meta_batch * self.batch_size;
        total_examples.div_ceil(per).max(1)
    }
}

/// Task-specific parameters after inner-loop adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParams {
    pub params: ParameterSet,
    /// Fingerprint of the initialization the adaptation started from.
    pub origin: u64,
    pub steps_taken: usize,
    /// `θ_0 … θ_{m-1}`, kept when higher-order tracking is requested.
    pub trajectory: Vec<ParameterSet>,
}

/// `m` SGD steps on the support loss, starting from a copy of `theta`.
pub fn inner_adapt<D: Differentiable>(
    objective: &D,
    theta: &ParameterSet,
    support: &[D::Example],
    alpha: f64,
    m: usize,
    trainable: &TrainableMask,
    track_higher_order: bool,
) -> Result<AdaptedParams> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let mut current = theta.clone();
    let mut trajectory = Vec::new();
    for step in 0..m {
        let (loss, mut g) = loss_and_grad(objective, &current, support)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        trainable.apply(&mut g);
        if track_higher_order {
            trajectory.push(current.clone());
        }
        current.add_scaled(&g, -alpha, trainable);
        if !current.is_finite() {
            return Err(Error::Divergence { step });
        }
    }
    Ok(AdaptedParams {
        params: current,
        origin: theta.fingerprint(),
        steps_taken: m,
        trajectory,
    })
}

/// Query loss after adaptation and its gradient with respect to `theta`.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient<D: Differentiable>(
    objective: &D,
    theta: &ParameterSet,
    support: &[D::Example],
    query: &[D::Example],
    alpha: f64,
    m: usize,
    order: Order,
    trainable: &TrainableMask,
) -> Result<(f64, Grads)> {
    if query.is_empty() {
        return Err(Error::InvalidArgument("empty query set".into()));
    }
    let adapted = inner_adapt(objective, theta, support, alpha, m, trainable, order == Order::Second)?;
    let (loss, mut v) = loss_and_grad(objective, &adapted.params, query)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: m });
    }
    if order == Order::Second {
        for theta_k in adapted.trajectory.iter().rev() {
            let mut u = v.clone();
            trainable.apply(&mut u);
            let hp = hessian_vector_product(objective, theta_k, support, &u)?;
            for (vi, hi) in v.iter_mut().zip(&hp.hvp) {
                for (a, b) in vi.iter_mut().zip(hi) {
                    *a -= alpha * b;
                }
            }
        }
    }
    trainable.apply(&mut v);
    Ok((loss, v))
}

/// Stateful outer loop: owns the outer optimizer across meta-steps.
#[derive(Debug, Clone)]
pub struct MetaLearner {
    pub cfg: MetaConfig,
    trainable: TrainableMask,
    outer: Optimizer,
}

impl MetaLearner {
    pub fn new(cfg: MetaConfig, trainable: TrainableMask) -> Result<Self> {
        cfg.validate()?;
        Ok(MetaLearner {
            outer: cfg.outer(),
            cfg,
            trainable,
        })
    }

    pub fn trainable(&self) -> &TrainableMask {
        &self.trainable
    }

    /// One meta-update from the mean of the tasks' query losses. Returns the
    /// meta-loss measured before the update.
    pub fn step<D>(&mut self, objective: &D, theta: &mut ParameterSet, tasks: &[TaskBatch<D::Example>]) -> Result<f64>
    where
        D: Differentiable + Sync,
        D::Example: Sync,
    {
        self.step_with(&Serial, objective, theta, tasks)
    }

    /// [`MetaLearner::step`] with the per-task meta-gradients computed on
    /// `exec`. Gradients are summed in task order, so the update does not
    /// depend on the executor.
    pub fn step_with<E, D>(&mut self, exec: &E, objective: &D, theta: &mut ParameterSet, tasks: &[TaskBatch<D::Example>]) -> Result<f64>
    where
        E: Executor + ?Sized,
        D: Differentiable + Sync,
        D::Example: Sync,
    {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("no tasks in meta-batch".into()));
        }
        if let Some(task) = tasks.iter().find(|t| t.support.is_empty() || t.query.is_empty()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "task for {} has an empty support or query set",
                task.lang
            )));
        }
        let (alpha, m, order) = (self.cfg.alpha, self.cfg.m, self.cfg.order);
        let trainable = &self.trainable;
        let at: &ParameterSet = theta;
        let results = exec.map(tasks, |task| {
            meta_gradient(objective, at, &task.support, &task.query, alpha, m, order, trainable)
        });
        let mut total = theta.zero_grads();
        let mut meta_loss = 0.0;
        for r in results {
            let (loss, g) = r?;
            meta_loss += loss;
            for (t, gi) in total.iter_mut().zip(&g) {
                for (a, b) in t.iter_mut().zip(gi) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / tasks.len() as f64;
        total.iter_mut().flatten().for_each(|x| *x *= inv);
        self.outer.step(theta, &total, &self.trainable)?;
        Ok(meta_loss * inv)
    }
}

/// Single meta-update with a fresh outer optimizer.
pub fn meta_step<D>(
    objective: &D,
    theta: &ParameterSet,
    tasks: &[TaskBatch<D::Example>],
    cfg: &MetaConfig,
    trainable: &TrainableMask,
) -> Result<(ParameterSet, f64)>
where
    D: Differentiable + Sync,
    D::Example: Sync,
{
    let mut learner = MetaLearner::new(cfg.clone(), trainable.clone())?;
    let mut next = theta.clone();
    let loss = learner.step(objective, &mut next, tasks)?;
    Ok((next, loss))
}

/// One line of the meta-training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLogEntry {
    pub step: usize,
    pub epoch: usize,
    /// Tasks drawn per language in this meta-batch.
    pub lang_counts: BTreeMap<String, usize>,
    pub meta_loss: f64,
}

/// Full meta-training: `epochs` passes of uniformly sampled task batches.
///
/// `on_step` sees each log entry and the parameters after that step.
pub fn meta_train<D, R, F>(
    objective: &D,
    theta: &ParameterSet,
    meta_sets: &BTreeMap<LangCode, Vec<D::Example>>,
    cfg: &MetaConfig,
    trainable: &TrainableMask,
    rng: &mut R,
    on_step: F,
) -> Result<ParameterSet>
where
    D: Differentiable + Sync,
    D::Example: Clone + Sync,
    R: Rng + ?Sized,
    F: FnMut(&MetaLogEntry, &ParameterSet) -> Result<()>,
{
    meta_train_with(&Serial, objective, theta, meta_sets, cfg, trainable, rng, on_step)
}

/// [`meta_train`] with each meta-batch's tasks processed on `exec`.
#[allow(clippy::too_many_arguments)]
pub fn meta_train_with<E, D, R, F>(
    exec: &E,
    objective: &D,
    theta: &ParameterSet,
    meta_sets: &BTreeMap<LangCode, Vec<D::Example>>,
    cfg: &MetaConfig,
    trainable: &TrainableMask,
    rng: &mut R,
    mut on_step: F,
) -> Result<ParameterSet>
where
    E: Executor + ?Sized,
    D: Differentiable + Sync,
    D::Example: Clone + Sync,
    R: Rng + ?Sized,
    F: FnMut(&MetaLogEntry, &ParameterSet) -> Result<()>,
{
    cfg.validate()?;
    let mut learner = MetaLearner::new(cfg.clone(), trainable.clone())?;
    let mut current = theta.clone();
    if cfg.epochs == 0 {
        return Ok(current);
    }
    let total: usize = meta_sets.values().map(Vec::len).sum();
    let per_epoch = cfg.iterations_per_epoch(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let mut tasks = Vec::with_capacity(cfg.tasks_per_meta_batch);
            let mut lang_counts = BTreeMap::new();
            for _ in 0..cfg.tasks_per_meta_batch {
                let t = sample_task_batch(meta_sets, cfg.batch_size, cfg.support_fraction, rng)?;
                *lang_counts.entry(String::from(t.lang.as_str())).or_insert(0) += 1;
                tasks.push(t);
            }
            let meta_loss = learner.step_with(exec, objective, &mut current, &tasks).map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { step },
                other => other,
            })?;
            on_step(
                &MetaLogEntry {
                    step,
                    epoch,
                    lang_counts,
                    meta_loss,
                },
                &current,
            )?;
            step += 1;
        }
    }
    Ok(current)
}

/// Plain SGD fine-tuning on a handful of target examples.
pub fn few_shot_adapt<D>(
    objective: &D,
    theta: &ParameterSet,
    support: &[D::Example],
    steps: usize,
    lr: f64,
    trainable: &TrainableMask,
) -> Result<ParameterSet>
where
    D: Differentiable + Sync,
    D::Example: Clone + Sync,
{
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let cfg = TrainConfig {
        steps,
        batch_size: support.len(),
        lr,
        optimizer: OptimizerKind::Sgd,
        weight_decay: 0.0,
        seed: 0,
    };
    Ok(train(objective, theta, support, trainable, &cfg, |_| {})?.0)
}

#[cfg(test)]
mod tests;

//! Plain supervised training, shared by every non-meta stage.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batch_loss_and_grad, loss_value, Differentiable};
use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::optim::{AdamWConfig, Optimizer, OptimizerKind};
use crate::params::{ParameterSet, TrainableMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            lr: 1e-3,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.lr),
            OptimizerKind::AdamW => Optimizer::adamw(
                self.lr,
                AdamWConfig {
                    weight_decay: self.weight_decay,
                    ..AdamWConfig::default()
                },
            ),
        }
    }
}

/// Per-step callback payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
}

/// Minibatch training over reshuffled passes of `data`.
///
/// Returns the trained parameters and the per-step losses. Frozen tensors are
/// left bitwise untouched. A non-finite loss stops training with
/// [`Error::Divergence`].
pub fn train<D, F>(
    objective: &D,
    params: &ParameterSet,
    data: &[D::Example],
    trainable: &TrainableMask,
    cfg: &TrainConfig,
    on_step: F,
) -> Result<(ParameterSet, Vec<f64>)>
where
    D: Differentiable + Sync,
    D::Example: Clone + Sync,
    F: FnMut(StepReport),
{
    train_with(&Serial, objective, params, data, trainable, cfg, on_step)
}

/// [`train`] with per-example gradients computed on `exec`.
pub fn train_with<E, D, F>(
    exec: &E,
    objective: &D,
    params: &ParameterSet,
    data: &[D::Example],
    trainable: &TrainableMask,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<(ParameterSet, Vec<f64>)>
where
    E: Executor + ?Sized,
    D: Differentiable + Sync,
    D::Example: Clone + Sync,
    F: FnMut(StepReport),
{
    if cfg.steps == 0 {
        return Ok((params.clone(), Vec::new()));
    }
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("training needs data and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut theta = params.clone();
    let mut opt = cfg.optimizer();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, mut grads) = batch_loss_and_grad(exec, objective, &theta, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        trainable.apply(&mut grads);
        opt.step(&mut theta, &grads, trainable)?;
        losses.push(loss);
        on_step(StepReport { step, loss });
    }
    if !theta.is_finite() {
        return Err(Error::Divergence { step: cfg.steps });
    }
    Ok((theta, losses))
}

/// Mean loss over `data` in chunks of `chunk` examples, weighted by chunk size.
pub fn mean_loss<D: Differentiable>(objective: &D, params: &ParameterSet, data: &[D::Example], chunk: usize) -> Result<f64>
where
    D::Example: Clone,
{
    if data.is_empty() {
        return Err(Error::InvalidArgument("no data".into()));
    }
    let chunk = chunk.max(1);
    let mut total = 0.0;
    for part in data.chunks(chunk) {
        total += loss_value(objective, params, part)? * part.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Scalar, Tape, Var};
    use crate::params::Tensor;
    use alloc::string::String;
    use alloc::vec;

    /// Least squares `mean (w x - y)^2`.
    pub(crate) struct Line;

    impl Differentiable for Line {
        type Example = (f64, f64);

        fn build_loss<S: Scalar>(&self, tape: &mut Tape<S>, p: &[Var], batch: &[(f64, f64)]) -> Result<Var> {
            let xs: Vec<S> = batch.iter().map(|e| S::from_f64(e.0)).collect();
            let x = tape.constant(xs, batch.len(), 1);
            let pred = tape.matmul(x, p[0]);
            let ys: Vec<f64> = batch.iter().map(|e| -e.1).collect();
            let r = tape.add_const(pred, &ys);
            let sq = tape.mul(r, r);
            let s = tape.sum(sq);
            Ok(tape.scale(s, 1.0 / batch.len() as f64))
        }
    }

    fn w(v: f64) -> ParameterSet {
        ParameterSet::from_entries([(String::from("w"), Tensor::new(&[1, 1], vec![v]).unwrap())]).unwrap()
    }

    #[test]
    fn fits_a_line() {
        let data: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 10.0, 3.0 * i as f64 / 10.0)).collect();
        let cfg = TrainConfig {
            steps: 300,
            batch_size: 4,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let (p, losses) = train(&Line, &w(0.0), &data, &TrainableMask::all(1), &cfg, |_| {}).unwrap();
        assert!((p.get("w").unwrap().data[0] - 3.0).abs() < 1e-3);
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn zero_steps_and_frozen_are_no_ops() {
        let data = vec![(1.0, 2.0)];
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (p, l) = train(&Line, &w(0.5), &data, &TrainableMask::all(1), &cfg, |_| {}).unwrap();
        assert_eq!(p, w(0.5));
        assert!(l.is_empty());
        let cfg = TrainConfig {
            steps: 10,
            ..TrainConfig::default()
        };
        let frozen = TrainableMask::from_flags(vec![false]);
        let (p, _) = train(&Line, &w(0.5), &data, &frozen, &cfg, |_| {}).unwrap();
        assert_eq!(p, w(0.5));
    }

    #[test]
    fn divergence_reports_step() {
        let data = vec![(10.0, 1.0)];
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 1,
            lr: 10.0,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let err = train(&Line, &w(1.0), &data, &TrainableMask::all(1), &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { step } if step > 0));
    }

    #[test]
    fn chunked_mean_matches_whole() {
        let data: Vec<(f64, f64)> = (0..7).map(|i| (i as f64, 1.0)).collect();
        let whole = loss_value(&Line, &w(0.3), &data).unwrap();
        let chunked = mean_loss(&Line, &w(0.3), &data, 3).unwrap();
        assert!((whole - chunked).abs() < 1e-12);
    }
}

//! First-order optimizers over a [`ParameterSet`].
//!
//! Frozen tensors are skipped outright, so neither the update nor weight
//! decay can touch them.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParameterSet, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    AdamW {
        lr: f64,
        cfg: AdamWConfig,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adamw(lr: f64, cfg: AdamWConfig) -> Self {
        Optimizer::AdamW {
            lr,
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::AdamW => Self::adamw(lr, AdamWConfig::default()),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::AdamW { lr, .. } => *lr,
        }
    }

    /// Apply one update. `grads` must line up with `params`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Vec<f64>], trainable: &TrainableMask) -> Result<()> {
        if grads.len() != params.len() || trainable.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (g, t) in grads.iter().zip(params.tensors()) {
            if g.len() != t.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.len(),
                    found: g.len(),
                });
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                params.add_scaled(grads, -*lr, trainable);
            }
            Optimizer::AdamW { lr, cfg, step, m, v } => {
                if m.is_empty() {
                    *m = params.zero_grads();
                    *v = params.zero_grads();
                }
                *step += 1;
                let bc1 = 1.0 - libm::pow(cfg.beta1, *step as f64);
                let bc2 = 1.0 - libm::pow(cfg.beta2, *step as f64);
                for (i, t) in params.tensors_mut().iter_mut().enumerate() {
                    if !trainable.is_trainable(i) {
                        continue;
                    }
                    for k in 0..t.data.len() {
                        let g = grads[i][k];
                        m[i][k] = cfg.beta1 * m[i][k] + (1.0 - cfg.beta1) * g;
                        v[i][k] = cfg.beta2 * v[i][k] + (1.0 - cfg.beta2) * g * g;
                        let mh = m[i][k] / bc1;
                        let vh = v[i][k] / bc2;
                        let p = &mut t.data[k];
                        *p -= *lr * (mh / (libm::sqrt(vh) + cfg.eps) + cfg.weight_decay * *p);
                    }
                }
            }
        }
        Ok(())
    }
}

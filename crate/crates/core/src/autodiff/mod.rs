//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Graphs are rebuilt per evaluation. Exact Hessian-vector products come from
//! rebuilding the same graph with [`Dual`] elements.

mod scalar;
mod tape;

pub use scalar::{Dual, Scalar};
pub use tape::{Gradients, Tape, Var};

use alloc::vec::Vec;

use crate::error::Result;
use crate::exec::Executor;
use crate::params::{Grads, ParameterSet};

/// A scalar loss over a parameter set, expressible on any [`Scalar`] tape.
pub trait Differentiable {
    type Example;

    /// Record the loss of `batch` on `tape`. `params` are the leaves created
    /// for each tensor of the parameter set, in its canonical order.
    fn build_loss<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], batch: &[Self::Example]) -> Result<Var>;

    /// Weight of `batch` such that the loss of a concatenation is the
    /// weighted mean of the parts' losses. Mean-over-examples losses keep the
    /// default.
    fn weight(&self, batch: &[Self::Example]) -> f64 {
        batch.len() as f64
    }
}

fn leaves<S: Scalar>(tape: &mut Tape<S>, params: &ParameterSet, mut make: impl FnMut(usize, usize, f64) -> S) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let values = t.data.iter().enumerate().map(|(k, v)| make(ti, k, *v)).collect();
            tape.param(values, t.rows(), t.cols())
        })
        .collect()
}

pub fn loss_value<D: Differentiable>(objective: &D, params: &ParameterSet, batch: &[D::Example]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars = leaves(&mut tape, params, |_, _, v| v);
    let root = objective.build_loss(&mut tape, &vars, batch)?;
    Ok(tape.scalar(root))
}

pub fn loss_and_grad<D: Differentiable>(objective: &D, params: &ParameterSet, batch: &[D::Example]) -> Result<(f64, Grads)> {
    let mut tape = Tape::<f64>::new();
    let vars = leaves(&mut tape, params, |_, _, v| v);
    let root = objective.build_loss(&mut tape, &vars, batch)?;
    let loss = tape.scalar(root);
    let grads = tape.backward(root);
    let g = vars
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| match grads.wrt(*v) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; t.len()],
        })
        .collect();
    Ok((loss, g))
}

/// [`loss_and_grad`] evaluated one example at a time on `exec` and recombined
/// with [`Differentiable::weight`]. The result is independent of the
/// executor, though it may differ from the whole-batch evaluation by rounding.
pub fn batch_loss_and_grad<D, E>(exec: &E, objective: &D, params: &ParameterSet, batch: &[D::Example]) -> Result<(f64, Grads)>
where
    D: Differentiable + Sync,
    D::Example: Sync,
    E: Executor + ?Sized,
{
    if batch.len() <= 1 {
        return loss_and_grad(objective, params, batch);
    }
    let parts = exec.map(batch, |ex| {
        let one = core::slice::from_ref(ex);
        loss_and_grad(objective, params, one).map(|(l, g)| (objective.weight(one), l, g))
    });
    let mut total_w = 0.0;
    let mut loss = 0.0;
    let mut grads = params.zero_grads();
    for part in parts {
        let (w, l, g) = part?;
        total_w += w;
        loss += w * l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += w * b;
            }
        }
    }
    let inv = 1.0 / total_w;
    grads.iter_mut().flatten().for_each(|x| *x *= inv);
    Ok((loss * inv, grads))
}

/// Loss, gradient and Hessian-vector product at `params`.
#[derive(Debug, Clone)]
pub struct HessianProduct {
    pub loss: f64,
    pub grad: Grads,
    pub hvp: Grads,
}

pub fn hessian_vector_product<D: Differentiable>(
    objective: &D,
    params: &ParameterSet,
    batch: &[D::Example],
    direction: &[Vec<f64>],
) -> Result<HessianProduct> {
    let mut tape = Tape::<Dual>::new();
    let vars = leaves(&mut tape, params, |ti, k, v| Dual::new(v, direction[ti][k]));
    let root = objective.build_loss(&mut tape, &vars, batch)?;
    let loss = tape.scalar(root).re;
    let grads = tape.backward(root);
    let mut grad = Vec::with_capacity(vars.len());
    let mut hvp = Vec::with_capacity(vars.len());
    for (v, t) in vars.iter().zip(params.tensors()) {
        match grads.wrt(*v) {
            Some(g) => {
                grad.push(g.iter().map(|d| d.re).collect());
                hvp.push(g.iter().map(|d| d.eps).collect());
            }
            None => {
                grad.push(alloc::vec![0.0; t.len()]);
                hvp.push(alloc::vec![0.0; t.len()]);
            }
        }
    }
    Ok(HessianProduct { loss, grad, hvp })
}

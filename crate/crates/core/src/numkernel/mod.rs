//! Dense numeric substrate shared by every model in the crate.
//!
//! Everything is `f64`. Gradients are produced by explicit backward functions
//! that sit next to their forward counterparts; there is no autodiff graph.

mod lstm;
mod matrix;
mod optim;

pub use lstm::{lstm_step, LstmCache, LstmGrads, LstmParams, LstmStack, LstmStackCache, LstmStackStream, RecurrentState};
pub use matrix::{axpy, dot, Matrix};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use crate::error::{Error, Result};

/// Finite-difference step used by every gradient check in the crate.
pub const FD_EPSILON: f64 = 1e-5;

/// `w·x + b`.
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols() || b.len() != w.rows() {
        return Err(Error::shape(format!(
            "affine: x has {} values, w is {}x{}, b has {}",
            x.len(),
            w.rows(),
            w.cols(),
            b.len()
        )));
    }
    let mut out = w.matvec(x);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    Ok(out)
}

/// Accumulates the gradients of `affine` given `g = ∂L/∂out`.
/// Returns `∂L/∂x`.
pub fn affine_backward(x: &[f64], w: &Matrix, g: &[f64], dw: &mut Matrix, db: &mut [f64]) -> Vec<f64> {
    dw.add_outer(g, x);
    for (d, gi) in db.iter_mut().zip(g) {
        *d += gi;
    }
    let mut dx = vec![0.0; x.len()];
    w.matvec_t_acc(g, &mut dx);
    dx
}

pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("logsumexp of an empty vector"));
    }
    Ok(logsumexp_unchecked(values))
}

#[inline]
pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::arg("log_softmax of an empty vector"));
    }
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

#[inline]
pub(crate) fn log_softmax_in_place(v: &mut [f64]) {
    let lse = logsumexp_unchecked(v);
    for x in v.iter_mut() {
        *x -= lse;
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let mut out = log_softmax(logits)?;
    out.iter_mut().for_each(|x| *x = x.exp());
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A bundle of named parameter tensors that optimizers and checkpoints can walk.
///
/// Both visitors must yield tensors in the same, fixed declaration order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every value into one flat vector.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(scale, src, dst);
        }
    }
}

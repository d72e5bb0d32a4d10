use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numkernel::{log_add, log_softmax_in_place, Matrix};

/// Forward-backward tables over the `T × (U+1)` transducer lattice.
///
/// Node `(t, u)` has consumed `t` encoder steps (zero-based) and emitted `u`
/// labels. Blank moves to `(t+1, u)`, a label to `(t, u+1)`; the lattice ends
/// with a blank out of `(T-1, U)`.
#[derive(Debug, Clone)]
pub struct LossLattice {
    pub t_len: usize,
    pub u_len: usize,
    pub alpha: Matrix,
    pub beta: Matrix,
    pub log_blank: Matrix,
    /// Log-probability of emitting label `u+1` at node `(t, u)`; column `U` is −∞.
    pub log_emit: Matrix,
}

impl LossLattice {
    pub fn new(log_blank: Matrix, log_emit: Matrix) -> Result<Self> {
        let (t_len, cols) = (log_blank.rows(), log_blank.cols());
        if t_len == 0 || cols == 0 {
            return Err(Error::arg("lattice needs T ≥ 1"));
        }
        if log_emit.rows() != t_len || log_emit.cols() != cols {
            return Err(Error::shape("blank and emission tables differ in shape"));
        }
        let u_len = cols - 1;
        let mut alpha = Matrix::zeros(t_len, cols);
        alpha.fill(f64::NEG_INFINITY);
        alpha.set(0, 0, 0.0);
        for t in 0..t_len {
            for u in 0..=u_len {
                if t == 0 && u == 0 {
                    continue;
                }
                let mut a = f64::NEG_INFINITY;
                if t > 0 {
                    a = alpha.get(t - 1, u) + log_blank.get(t - 1, u);
                }
                if u > 0 {
                    a = log_add(a, alpha.get(t, u - 1) + log_emit.get(t, u - 1));
                }
                alpha.set(t, u, a);
            }
        }
        let mut beta = Matrix::zeros(t_len, cols);
        beta.fill(f64::NEG_INFINITY);
        for t in (0..t_len).rev() {
            for u in (0..=u_len).rev() {
                let mut b = if t + 1 < t_len {
                    beta.get(t + 1, u) + log_blank.get(t, u)
                } else if u == u_len {
                    log_blank.get(t, u)
                } else {
                    f64::NEG_INFINITY
                };
                if u < u_len {
                    b = log_add(b, beta.get(t, u + 1) + log_emit.get(t, u));
                }
                beta.set(t, u, b);
            }
        }
        Ok(LossLattice {
            t_len,
            u_len,
            alpha,
            beta,
            log_blank,
            log_emit,
        })
    }

    /// `log P(labels | input)` from the forward table.
    pub fn log_likelihood(&self) -> f64 {
        self.alpha.get(self.t_len - 1, self.u_len) + self.log_blank.get(self.t_len - 1, self.u_len)
    }

    /// The same quantity from the backward table.
    pub fn log_likelihood_beta(&self) -> f64 {
        self.beta.get(0, 0)
    }

    /// Derivatives of `−log P` with respect to each node's blank and emission
    /// log-probabilities; emission terms are scaled by `1 + fastemit_lambda`.
    pub fn gradients(&self, fastemit_lambda: f64) -> (Matrix, Matrix) {
        let ll = self.log_likelihood();
        let (t_len, u_len) = (self.t_len, self.u_len);
        let mut g_blank = Matrix::zeros(t_len, u_len + 1);
        let mut g_emit = Matrix::zeros(t_len, u_len + 1);
        for t in 0..t_len {
            for u in 0..=u_len {
                let a = self.alpha.get(t, u);
                if a == f64::NEG_INFINITY {
                    continue;
                }
                let next = if t + 1 < t_len {
                    self.beta.get(t + 1, u)
                } else if u == u_len {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
                g_blank.set(t, u, -(a + self.log_blank.get(t, u) + next - ll).exp());
                if u < u_len {
                    let occ = (a + self.log_emit.get(t, u) + self.beta.get(t, u + 1) - ll).exp();
                    g_emit.set(t, u, -(1.0 + fastemit_lambda) * occ);
                }
            }
        }
        (g_blank, g_emit)
    }
}

/// Loss and logit gradients of one lattice.
#[derive(Debug, Clone)]
pub struct LatticeLoss {
    pub loss: f64,
    /// Same layout as the input logits.
    pub d_logits: Matrix,
    /// Log-softmax of the input logits.
    pub log_probs: Matrix,
    pub lattice: LossLattice,
}

/// Transducer loss from raw joint logits.
///
/// `logits` has one row per node, row `t·(U+1) + u`, with one column per
/// output class. Returns `−log P(labels)` and its gradient with respect to the
/// logits, with the FastEmit scaling applied to label-emission terms.
pub fn lattice_loss(logits: &Matrix, t_len: usize, labels: &[TokenId], blank: TokenId, fastemit_lambda: f64) -> Result<LatticeLoss> {
    let cols = labels.len() + 1;
    let k = logits.cols();
    if t_len == 0 {
        return Err(Error::arg("lattice needs at least one encoder step"));
    }
    if logits.rows() != t_len * cols {
        return Err(Error::shape(format!(
            "expected {} logit rows for T={t_len}, U={}, got {}",
            t_len * cols,
            labels.len(),
            logits.rows()
        )));
    }
    if blank >= k {
        return Err(Error::arg(format!("blank id {blank} outside {k} outputs")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == blank || l >= k) {
        return Err(Error::arg(format!("label {bad} is blank or outside {k} outputs")));
    }
    if !(fastemit_lambda >= 0.0) {
        return Err(Error::arg("fastemit_lambda must be non-negative"));
    }
    let mut log_probs = logits.clone();
    for r in 0..log_probs.rows() {
        log_softmax_in_place(log_probs.row_mut(r));
    }
    let mut lb = Matrix::zeros(t_len, cols);
    let mut le = Matrix::zeros(t_len, cols);
    for t in 0..t_len {
        for u in 0..cols {
            let row = log_probs.row(t * cols + u);
            lb.set(t, u, row[blank]);
            le.set(t, u, labels.get(u).map_or(f64::NEG_INFINITY, |&l| row[l]));
        }
    }
    let lattice = LossLattice::new(lb, le)?;
    let loss = -lattice.log_likelihood();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("transducer loss is {loss}")));
    }
    let (g_blank, g_emit) = lattice.gradients(fastemit_lambda);
    let mut d_logits = Matrix::zeros(logits.rows(), k);
    for t in 0..t_len {
        for u in 0..cols {
            let r = t * cols + u;
            let (gb, ge) = (g_blank.get(t, u), g_emit.get(t, u));
            let total = gb + ge;
            if total == 0.0 {
                continue;
            }
            let lp = log_probs.row(r);
            let d = d_logits.row_mut(r);
            for c in 0..k {
                d[c] = -lp[c].exp() * total;
            }
            d[blank] += gb;
            if let Some(&l) = labels.get(u) {
                d[l] += ge;
            }
        }
    }
    Ok(LatticeLoss {
        loss,
        d_logits,
        log_probs,
        lattice,
    })
}

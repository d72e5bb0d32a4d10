use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: OptimizerKind::Adam,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::arg(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::arg(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// SGD or Adam over a list of named tensors. Adam moments are allocated lazily
/// on the first step and keyed by position, so the tensor list must keep the
/// same order across calls.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `params` and `grads` are matched by position and name.
    pub fn step(&mut self, params: Vec<(String, &mut [f64])>, grads: Vec<(String, &[f64])>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "optimizer got {} parameter tensors and {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        let mut sq_norm = 0.0;
        for ((pn, p), (gn, g)) in params.iter().zip(&grads) {
            if p.len() != g.len() || pn != gn {
                return Err(Error::shape(format!(
                    "gradient {gn} ({}) does not match parameter {pn} ({})",
                    g.len(),
                    p.len()
                )));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training {
                    step: self.steps as usize,
                    message: format!("non-finite gradient in {gn}[{bad}]"),
                });
            }
            sq_norm += g.iter().map(|v| v * v).sum::<f64>();
        }
        let scale = match self.cfg.clip_norm {
            Some(c) if sq_norm.sqrt() > c => c / sq_norm.sqrt(),
            _ => 1.0,
        };
        self.steps += 1;
        let lr = self.cfg.learning_rate;
        match self.cfg.method {
            OptimizerKind::Sgd => {
                for ((_, p), (_, g)) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * scale * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                }
                let (b1, b2, eps) = (self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_epsilon);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (k, ((_, p), (_, g))) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..p.len() {
                        let gi = g[i] * scale;
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

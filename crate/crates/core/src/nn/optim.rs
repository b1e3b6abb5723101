//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.kind == OptimKind::Adam {
            for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::config(format!("{name} must be in [0, 1), got {v}")));
                }
            }
            if !(self.eps > 0.0) {
                return Err(Error::config(format!("adam eps must be positive, got {}", self.eps)));
            }
        }
        Ok(())
    }
}

/// Per-parameter optimizer accumulators. Built once against the parameter
/// shapes of a network and stepped with gradients in the same order.
pub struct OptimizerState {
    cfg: OptimConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl OptimizerState {
    pub fn new(cfg: OptimConfig, shapes: &[Vec<usize>]) -> Result<Self> {
        cfg.validate()?;
        let first = shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        let second = shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        Ok(OptimizerState {
            cfg,
            first,
            second,
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update in place. `params` and `grads` must match the
    /// shapes given at construction, slot for slot.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::config(format!(
                "optimizer built for {} parameter slots, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(&self.first[i]) || !g.same_shape(&self.first[i]) {
                return Err(Error::config(format!(
                    "optimizer slot {i} expects shape {:?}, got param {:?} and grad {:?}",
                    self.first[i].shape(),
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        match self.cfg.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.cfg.lr * gv;
                    }
                }
            }
            OptimKind::Adam => {
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let bc1 = 1.0 - b1.powi(self.t as i32);
                let bc2 = 1.0 - b2.powi(self.t as i32);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut()))
                    {
                        *mv = b1 * *mv + (1.0 - b1) * gv;
                        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Number of completed steps.
    pub t: u64,
    /// One slot per parameter tensor (Adam only; empty for SGD).
    pub slots: Vec<MomentSlot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(DiffError::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            t: 0,
            slots: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    /// Applies one update. `params[i]` is paired with `grads[i]`; `names[i]`
    /// is used in error messages. Nothing is modified on error.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DiffError::GradientCount {
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = || names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if p.shape() != g.shape() {
                return Err(DiffError::Shape {
                    op: "optimizer_step",
                    detail: format!("{}: param {:?} vs grad {:?}", name(), p.shape(), g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(DiffError::NonFiniteGradient(name()));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.learning_rate * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.slots.is_empty() {
                    self.slots = params
                        .iter()
                        .map(|p| MomentSlot {
                            m: vec![0.0; p.len()],
                            v: vec![0.0; p.len()],
                        })
                        .collect();
                }
                if self.slots.len() != params.len() {
                    return Err(DiffError::InvalidArgument(format!(
                        "optimizer holds state for {} tensors, step called with {}",
                        self.slots.len(),
                        params.len()
                    )));
                }
                let t = (self.t + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
                    for (((x, &d), m), v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(&mut slot.m)
                        .zip(&mut slot.v)
                    {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *x -= self.learning_rate * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        self.t += 1;
        Ok(())
    }
}

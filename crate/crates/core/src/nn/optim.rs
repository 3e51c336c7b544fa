use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Global-norm clipping to `clip`, then the AdaGrad step.
    AdaGrad { lr: f64, clip: f64, eps: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adagrad() -> Self {
        OptimizerKind::AdaGrad {
            lr: 0.5,
            clip: 10.0,
            eps: 1e-8,
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// AdaGrad: running sum of squared gradients. Adam: first moment.
    first: Vec<f64>,
    /// Adam second moment; empty for AdaGrad.
    second: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::AdaGrad { .. } => Vec::new(),
            OptimizerKind::Adam { .. } => vec![0.0; num_params],
        };
        Self {
            kind,
            first: vec![0.0; num_params],
            second,
            steps: 0,
        }
    }

    /// Apply one update in place. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        DstError::check_dim("optimizer parameters", self.first.len(), params.len())?;
        DstError::check_dim("optimizer gradients", self.first.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(DstError::NonFinite(format!("gradient #{i}")));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::AdaGrad { lr, clip, eps } => {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                let scale = if norm > clip { clip / norm } else { 1.0 };
                for ((w, &g), acc) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    let g = g * scale;
                    *acc += g * g;
                    if *acc > 0.0 {
                        *w -= lr * g / (acc.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

//! First-order optimizers with per-group learning rates and serializable state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::config::{OptimizerKind, TrainConfig};
use crate::model::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

/// Adam or plain SGD. Moment estimates are kept per named parameter group
/// and created on first use, so groups that a phase never touches carry no state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed update steps; Adam's bias correction uses `t = steps + 1`.
    pub steps: u64,
    moments: BTreeMap<String, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { kind, beta1, beta2, eps, steps: 0, moments: BTreeMap::new() }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.optimizer, c.adam_beta1, c.adam_beta2, c.adam_eps)
    }

    /// Applies one update to `params`. Call [`Optimizer::finish_step`] once
    /// after all groups of a step have been updated.
    pub fn update(&mut self, group: &str, lr: f64, params: &mut ParamSet, grads: &[Matrix]) {
        assert_eq!(params.tensors.len(), grads.len(), "one gradient per tensor");
        match self.kind {
            OptimizerKind::Sgd => {
                if lr == 0.0 {
                    return;
                }
                for (p, g) in params.tensors.iter_mut().zip(grads) {
                    for (x, d) in p.data.iter_mut().zip(&g.data) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let t = (self.steps + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let st = self.moments.entry(group.to_owned()).or_insert_with(|| Moments {
                    m: params.tensors.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect(),
                    v: params.tensors.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect(),
                });
                for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut st.m[i].data, &mut st.v[i].data);
                    for (j, (x, &d)) in p.data.iter_mut().zip(&g.data).enumerate() {
                        m[j] = b1 * m[j] + (1.0 - b1) * d;
                        v[j] = b2 * v[j] + (1.0 - b2) * d * d;
                        if lr != 0.0 {
                            *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }

    pub fn finish_step(&mut self) {
        self.steps += 1;
    }
}

use serde::{Deserialize, Serialize};

use super::params::{xavier, ParamSet};
use crate::autodiff::{Graph, Matrix, Var};
use crate::config::TaskKind;
use crate::rng::SeededRng;

/// Two fully-connected layers with a ReLU in between, mapping a sentence
/// embedding to `K` logits or to one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub task: TaskKind,
    pub params: ParamSet,
}

impl Head {
    pub fn new(task: TaskKind, input: usize, hidden: usize, outputs: usize, rng: &SeededRng) -> Self {
        let mut rng = rng.child("head").rng();
        let mut params = ParamSet::default();
        params.push("w1", xavier(input, hidden, &mut rng));
        params.push("b1", Matrix::zeros(1, hidden));
        params.push("w2", xavier(hidden, outputs, &mut rng));
        params.push("b2", Matrix::zeros(1, outputs));
        Self { task, params }
    }

    /// Builds a head from explicit weights (`w1: input x hidden`, `w2: hidden x outputs`).
    pub fn from_weights(task: TaskKind, w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix) -> Self {
        assert_eq!(w1.cols, b1.cols);
        assert_eq!(w1.cols, w2.rows);
        assert_eq!(w2.cols, b2.cols);
        let mut params = ParamSet::default();
        params.push("w1", w1);
        params.push("b1", b1);
        params.push("w2", w2);
        params.push("b2", b2);
        Self { task, params }
    }

    pub fn input_dim(&self) -> usize {
        self.params.tensors[0].rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.tensors[0].cols
    }

    pub fn outputs(&self) -> usize {
        self.params.tensors[2].cols
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let h = g.affine(x, vars[0], vars[1]);
        let h = g.relu(h);
        g.affine(h, vars[2], vars[3])
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Gradients, Matrix, Var};

/// Named parameter tensors of one model component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Places every tensor on the tape as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    pub fn grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Matrix> {
        self.tensors.iter().zip(vars).map(|(t, &v)| grads.get_or_zeros(v, t)).collect()
    }

    pub fn same_shapes(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            h.update((t.rows as u64).to_le_bytes());
            h.update((t.cols as u64).to_le_bytes());
            for x in &t.data {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

/// Xavier-uniform initialization for a `fan_in x fan_out` weight.
pub(crate) fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, a, rng)
}

pub(crate) fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

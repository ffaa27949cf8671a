//! Masked-language-model corruption and objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, Matrix};
use crate::error::{Error, Result};
use crate::text::{MASK_TOKEN, NUM_SPECIAL_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedBatch {
    /// Token ids after corruption.
    pub inputs: Vec<usize>,
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    /// Original token at each selected position.
    pub targets: Vec<usize>,
}

impl MaskedBatch {
    pub fn num_masked(&self) -> usize {
        self.positions.len()
    }
}

/// Selects each position independently with probability `mask_prob`; a
/// selected token becomes `[MASK]` 80% of the time, a random regular token
/// 10% and stays unchanged 10%.
pub fn mlm_mask<R: Rng + ?Sized>(tokens: &[usize], mask_prob: f64, vocab_size: usize, rng: &mut R) -> Result<MaskedBatch> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot mask an empty sequence".into()));
    }
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::InvalidArgument(format!("mask probability {mask_prob} not in (0, 1)")));
    }
    if vocab_size <= NUM_SPECIAL_TOKENS {
        return Err(Error::InvalidArgument("vocabulary has no regular tokens".into()));
    }
    let mut inputs = tokens.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, &tok) in tokens.iter().enumerate() {
        if rng.gen::<f64>() >= mask_prob {
            continue;
        }
        positions.push(i);
        targets.push(tok);
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            inputs[i] = MASK_TOKEN;
        } else if roll < 0.9 {
            inputs[i] = rng.gen_range(NUM_SPECIAL_TOKENS..vocab_size);
        }
    }
    Ok(MaskedBatch { inputs, positions, targets })
}

/// Mean negative log-likelihood of the targets; `dists[i]` is the predicted
/// distribution at `batch.positions[i]`.
pub fn mlm_loss(dists: &[Vec<f64>], batch: &MaskedBatch) -> Result<f64> {
    if batch.positions.is_empty() {
        return Err(Error::InvalidArgument("no masked positions".into()));
    }
    if dists.len() != batch.positions.len() {
        return Err(Error::Dimension { expected: batch.positions.len(), found: dists.len() });
    }
    let mut total = 0.0;
    for (dist, &t) in dists.iter().zip(&batch.targets) {
        let p = *dist.get(t).ok_or(Error::Dimension { expected: t + 1, found: dist.len() })?;
        total -= p.ln();
    }
    Ok((total / dists.len() as f64).max(0.0))
}

/// Loss and gradient over full-sequence logits (`seq_len x vocab`); rows at
/// unmasked positions get zero gradient.
pub fn mlm_loss_grad(logits: &Matrix, batch: &MaskedBatch) -> Result<(f64, Matrix)> {
    let m = batch.positions.len();
    if m == 0 {
        return Err(Error::InvalidArgument("no masked positions".into()));
    }
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (&pos, &t) in batch.positions.iter().zip(&batch.targets) {
        let row = logits.row(pos);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        let g = grad.row_mut(pos);
        g.copy_from_slice(row);
        softmax_in_place(g);
        g[t] -= 1.0;
        g.iter_mut().for_each(|x| *x /= m as f64);
    }
    Ok(((total / m as f64).max(0.0), grad))
}

//! Training objectives as pure scalar functions.
//!
//! Each loss comes with a `*_grad` variant returning the gradient with respect
//! to its embedding, logit or prediction inputs; the pipeline injects those
//! gradients into the autodiff tape. All log-domain terms use max-subtraction.

use serde::{Deserialize, Serialize};

use crate::autodiff::dot;
use crate::error::{Error, Result};

/// Convex mixing weight, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MixWeight(f64);

impl MixWeight {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda < 1.0 {
            Ok(Self(lambda))
        } else {
            Err(Error::InvalidArgument(format!("mixing weight {lambda} not in (0, 1)")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `lambda * primary + (1 - lambda) * secondary`
    pub fn mix(self, primary: f64, secondary: f64) -> f64 {
        self.0 * primary + (1.0 - self.0) * secondary
    }
}

impl TryFrom<f64> for MixWeight {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixWeight> for f64 {
    fn from(m: MixWeight) -> f64 {
        m.0
    }
}

/// Anchor embedding and its candidates; candidate 0 is the positive.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    pub anchor: &'a [f64],
    pub candidates: Vec<&'a [f64]>,
    /// Divides every inner product; 1.0 leaves them raw.
    pub temperature: f64,
}

impl<'a> ContrastiveBatch<'a> {
    pub fn new(anchor: &'a [f64], candidates: Vec<&'a [f64]>) -> Self {
        Self { anchor, candidates, temperature: 1.0 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidArgument("contrastive batch has no candidates".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        let d = self.anchor.len();
        for c in &self.candidates {
            if c.len() != d {
                return Err(Error::Dimension { expected: d, found: c.len() });
            }
        }
        Ok(())
    }

    fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| dot(self.anchor, c) / self.temperature).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub anchor: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// `-ln( exp(z.z0) / sum_j exp(z.zj) )` with the positive included in the
/// denominator, so the value is never negative. A single candidate yields 0.
pub fn contrastive_nll(batch: &ContrastiveBatch<'_>) -> Result<f64> {
    batch.validate()?;
    let s = batch.scores();
    Ok((log_sum_exp(&s) - s[0]).max(0.0))
}

pub fn contrastive_nll_grad(batch: &ContrastiveBatch<'_>) -> Result<(f64, ContrastiveGrad)> {
    batch.validate()?;
    let s = batch.scores();
    let loss = (log_sum_exp(&s) - s[0]).max(0.0);
    let mut coef = softmax(&s);
    coef[0] -= 1.0;
    let inv_t = 1.0 / batch.temperature;
    let d = batch.anchor.len();
    let mut anchor = vec![0.0; d];
    let mut candidates = Vec::with_capacity(coef.len());
    for (c, cand) in coef.iter().zip(&batch.candidates) {
        for (a, x) in anchor.iter_mut().zip(cand.iter()) {
            *a += c * x * inv_t;
        }
        candidates.push(batch.anchor.iter().map(|z| c * z * inv_t).collect());
    }
    Ok((loss, ContrastiveGrad { anchor, candidates }))
}

/// Convex combination of the user-anchored and auxiliary contrastive losses.
pub fn robust_ua_loss(ua: f64, aux: f64, lambda: MixWeight) -> f64 {
    lambda.mix(ua, aux)
}

/// `-ln softmax(logits)[class]`
pub fn cross_entropy(logits: &[f64], class: usize) -> Result<f64> {
    check_class(logits, class)?;
    Ok((log_sum_exp(logits) - logits[class]).max(0.0))
}

/// Loss and gradient `softmax(logits) - onehot(class)`.
pub fn cross_entropy_grad(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    check_class(logits, class)?;
    let loss = (log_sum_exp(logits) - logits[class]).max(0.0);
    let mut g = softmax(logits);
    g[class] -= 1.0;
    Ok((loss, g))
}

fn check_class(logits: &[f64], class: usize) -> Result<()> {
    if class >= logits.len() {
        return Err(Error::InvalidArgument(format!("class {class} out of range for {} logits", logits.len())));
    }
    Ok(())
}

/// Predictions for one anchor and its context posts, with the anchor's label.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPredictionBatch<T, L> {
    pub anchor_output: T,
    pub context_outputs: Vec<T>,
    pub anchor_label: L,
}

impl<T, L> ContextPredictionBatch<T, L> {
    pub fn m(&self) -> usize {
        self.context_outputs.len()
    }
}

/// Mean cross-entropy of every context prediction against the anchor's class.
/// An empty context contributes 0.
pub fn contextual_ce(context_logits: &[Vec<f64>], anchor_class: usize) -> Result<f64> {
    Ok(contextual_ce_grad(context_logits, anchor_class)?.0)
}

pub fn contextual_ce_grad(context_logits: &[Vec<f64>], anchor_class: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = context_logits.len();
    if m == 0 {
        return Ok((0.0, Vec::new()));
    }
    let k = context_logits[0].len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m);
    for logits in context_logits {
        if logits.len() != k {
            return Err(Error::Dimension { expected: k, found: logits.len() });
        }
        let (l, mut g) = cross_entropy_grad(logits, anchor_class)?;
        total += l;
        g.iter_mut().for_each(|x| *x /= m as f64);
        grads.push(g);
    }
    Ok((total / m as f64, grads))
}

/// Mixes the anchor's task loss with the contextual term.
pub fn contextual_classification_loss(ce: f64, cce: f64, lambda: MixWeight) -> f64 {
    lambda.mix(ce, cce)
}

pub fn mse(y: f64, r: f64) -> f64 {
    (y - r) * (y - r)
}

/// Gradient of [`mse`] with respect to the prediction `r`.
pub fn mse_grad(y: f64, r: f64) -> f64 {
    2.0 * (r - y)
}

/// Mean of `(y - r)^2` over `(y, r)` pairs.
pub fn mse_batch(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(pairs.iter().map(|&(y, r)| mse(y, r)).sum::<f64>() / pairs.len() as f64)
}

/// Mean squared deviation of the context predictions from the anchor's score.
/// An empty context contributes 0.
pub fn contextual_mse(anchor_score: f64, context_preds: &[f64]) -> f64 {
    contextual_mse_grad(anchor_score, context_preds).0
}

pub fn contextual_mse_grad(anchor_score: f64, context_preds: &[f64]) -> (f64, Vec<f64>) {
    let m = context_preds.len();
    if m == 0 {
        return (0.0, Vec::new());
    }
    let loss = context_preds.iter().map(|&r| mse(anchor_score, r)).sum::<f64>() / m as f64;
    let grads = context_preds.iter().map(|&r| mse_grad(anchor_score, r) / m as f64).collect();
    (loss, grads)
}

pub fn contextual_regression_loss(mse: f64, cmse: f64, lambda: MixWeight) -> f64 {
    lambda.mix(mse, cmse)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    const LN_1P_EINV: f64 = 0.313_261_687_518_222_8; // ln(1 + e^-1)
    const LN_1P_E: f64 = 1.313_261_687_518_222_8; // ln(1 + e)

    #[test]
    fn contrastive_reference_values() {
        let z = [1.0, 0.0];
        let same = [0.5, 0.5];
        let b = ContrastiveBatch::new(&z, vec![&same, &same]);
        assert_abs_diff_eq!(contrastive_nll(&b).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let b = ContrastiveBatch::new(&z, vec![&same; 5]);
        assert_abs_diff_eq!(contrastive_nll(&b).unwrap(), 5f64.ln(), epsilon = 1e-12);

        let (z0, z1) = ([1.0, 0.0], [0.0, 1.0]);
        let b = ContrastiveBatch::new(&z, vec![&z0, &z1]);
        assert_abs_diff_eq!(contrastive_nll(&b).unwrap(), LN_1P_EINV, epsilon = 1e-12);

        let far = [1e6, 0.0];
        let b = ContrastiveBatch::new(&z, vec![&far, &z1]);
        assert_eq!(contrastive_nll(&b).unwrap(), 0.0);

        let b = ContrastiveBatch::new(&z, vec![&z1]);
        assert_eq!(contrastive_nll(&b).unwrap(), 0.0);
    }

    #[test]
    fn contrastive_dimension_mismatch() {
        let z = [1.0, 0.0];
        let bad = [1.0];
        assert!(matches!(
            contrastive_nll(&ContrastiveBatch::new(&z, vec![&z, &bad])),
            Err(Error::Dimension { expected: 2, found: 1 })
        ));
        assert!(contrastive_nll(&ContrastiveBatch::new(&z, vec![])).is_err());
    }

    #[test]
    fn temperature_rescales_scores() {
        let (z, z0, z1) = ([2.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let b = ContrastiveBatch::new(&z, vec![&z0, &z1]).with_temperature(2.0);
        assert_abs_diff_eq!(contrastive_nll(&b).unwrap(), LN_1P_EINV, epsilon = 1e-12);
    }

    #[test]
    fn mixing_reference_values() {
        let half = MixWeight::new(0.5).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(robust_ua_loss(ln2, ln2, half), ln2, epsilon = 1e-12);
        let l7 = MixWeight::new(0.7).unwrap();
        assert_abs_diff_eq!(robust_ua_loss(0.8, 0.0, l7), 0.56, epsilon = 1e-12);
        // ln(1+e^-1) and ln 5: 0.7 * 0.3133 + 0.3 * 1.6094
        assert_abs_diff_eq!(robust_ua_loss(0.3133, 1.6094, l7), 0.70213, epsilon = 1e-6);
        assert_abs_diff_eq!(robust_ua_loss(LN_1P_EINV, 5f64.ln(), l7), 0.7021 , epsilon = 1e-4);
        assert!(MixWeight::new(0.0).is_err());
        assert!(MixWeight::new(1.0).is_err());
        assert!(MixWeight::new(f64::NAN).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        assert_abs_diff_eq!(cross_entropy(&[0.0, 0.0, 0.0], 2).unwrap(), 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), LN_1P_EINV, epsilon = 1e-12);
        assert_eq!(cross_entropy(&[1e4, 0.0, 0.0], 0).unwrap(), 0.0);
        assert!(cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn contextual_ce_reference_values() {
        assert_abs_diff_eq!(contextual_ce(&[vec![0.0, 0.0, 0.0]], 1).unwrap(), 3f64.ln(), epsilon = 1e-12);
        let v = contextual_ce(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0).unwrap();
        assert_abs_diff_eq!(v, (LN_1P_EINV + LN_1P_E) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.8133, epsilon = 1e-4);
        assert_eq!(contextual_ce(&[vec![500.0, 0.0], vec![300.0, -2.0]], 0).unwrap(), 0.0);
        assert_eq!(contextual_ce(&[], 0).unwrap(), 0.0);

        let lam = MixWeight::new(0.6).unwrap();
        let mixed = contextual_classification_loss(3f64.ln(), v, lam);
        assert_abs_diff_eq!(mixed, 0.6 * 3f64.ln() + 0.4 * v, epsilon = 1e-12);
        assert_abs_diff_eq!(mixed, 0.9845, epsilon = 1e-4);
        let half = MixWeight::new(0.5).unwrap();
        assert_abs_diff_eq!(contextual_classification_loss(3f64.ln(), 3f64.ln(), half), 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(contextual_classification_loss(2.0, 0.0, lam), 1.2, epsilon = 1e-12);
    }

    #[test]
    fn regression_reference_values() {
        assert_eq!(mse(0.3, 0.3), 0.0);
        assert_eq!(mse(1.0, -1.0), 4.0);
        assert_abs_diff_eq!(mse_batch(&[(0.5, 0.2), (-0.3, 0.1)]).unwrap(), 0.125, epsilon = 1e-12);
        assert_eq!(contextual_mse(0.4, &[0.4, 0.4]), 0.0);
        assert_eq!(contextual_mse(1.0, &[0.0]), 1.0);
        assert_abs_diff_eq!(contextual_mse(0.5, &[0.2, 0.9]), 0.125, epsilon = 1e-12);
        assert_eq!(contextual_mse(0.5, &[]), 0.0);
        let lam = MixWeight::new(0.3).unwrap();
        assert_abs_diff_eq!(contextual_regression_loss(0.125, 0.125, lam), 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(contextual_regression_loss(0.5, 0.0, lam), 0.15, epsilon = 1e-12);
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 { diff } else { diff / scale }
    }

    fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let eps = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += eps;
                let mut m = x.to_vec();
                m[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = stream(5, "grad");
        for _ in 0..20 {
            let d = rng.gen_range(2..=16);
            let n = rng.gen_range(2..=6);
            let flat: Vec<f64> = (0..d * (n + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = rng.gen_range(0.5..2.0);
            let loss_of = |x: &[f64]| {
                let cands: Vec<&[f64]> = (1..=n).map(|j| &x[j * d..(j + 1) * d]).collect();
                contrastive_nll(&ContrastiveBatch::new(&x[..d], cands).with_temperature(t)).unwrap()
            };
            let cands: Vec<&[f64]> = (1..=n).map(|j| &flat[j * d..(j + 1) * d]).collect();
            let (_, g) = contrastive_nll_grad(&ContrastiveBatch::new(&flat[..d], cands).with_temperature(t)).unwrap();
            let analytic: Vec<f64> = g.anchor.iter().chain(g.candidates.iter().flatten()).copied().collect();
            assert!(rel_err(&analytic, &central(loss_of, &flat)) < 1e-4);
        }
    }

    #[test]
    fn classification_gradients_match_finite_differences() {
        let mut rng = stream(6, "grad");
        for _ in 0..20 {
            let k = rng.gen_range(2..=5);
            let m = rng.gen_range(1..=4);
            let y = rng.gen_range(0..k);
            let flat: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (_, g) = cross_entropy_grad(&flat[..k], y).unwrap();
            assert!(rel_err(&g, &central(|x| cross_entropy(x, y).unwrap(), &flat[..k])) < 1e-4);

            let rows = |x: &[f64]| x.chunks(k).map(<[f64]>::to_vec).collect::<Vec<_>>();
            let (_, g) = contextual_ce_grad(&rows(&flat), y).unwrap();
            let analytic: Vec<f64> = g.into_iter().flatten().collect();
            let numeric = central(|x| contextual_ce(&rows(x), y).unwrap(), &flat);
            assert!(rel_err(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn regression_gradients_match_finite_differences() {
        let mut rng = stream(7, "grad");
        for _ in 0..20 {
            let y: f64 = rng.gen_range(-1.0..1.0);
            let preds: Vec<f64> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (_, g) = contextual_mse_grad(y, &preds);
            assert!(rel_err(&g, &central(|x| contextual_mse(y, x), &preds)) < 1e-4);
            let ga = [mse_grad(y, preds[0])];
            assert!(rel_err(&ga, &central(|x| mse(y, x[0]), &preds[..1])) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn contrastive_is_nonnegative_and_permutation_invariant(
            seed in 0u64..10_000, d in 1usize..8, n in 2usize..7,
        ) {
            let mut rng = stream(seed, "perm");
            let vecs: Vec<Vec<f64>> = (0..=n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let cands: Vec<&[f64]> = vecs[1..].iter().map(Vec::as_slice).collect();
            let base = contrastive_nll(&ContrastiveBatch::new(&vecs[0], cands.clone())).unwrap();
            prop_assert!(base >= 0.0 && base.is_finite());
            let mut shuffled = cands.clone();
            shuffled[1..].reverse();
            let perm = contrastive_nll(&ContrastiveBatch::new(&vecs[0], shuffled)).unwrap();
            prop_assert!((base - perm).abs() < 1e-12);
        }

        #[test]
        fn contrastive_decreases_as_positive_score_grows(seed in 0u64..10_000, step in 0.01f64..2.0) {
            let mut rng = stream(seed, "mono");
            let z = [1.0, 0.0, 0.0];
            let negs: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect();
            let loss_at = |p: f64| {
                let pos = [p, 0.0, 0.0];
                let mut c: Vec<&[f64]> = vec![&pos];
                c.extend(negs.iter().map(|n| n.as_slice()));
                contrastive_nll(&ContrastiveBatch::new(&z, c)).unwrap()
            };
            let p0 = rng.gen_range(-2.0..2.0);
            prop_assert!(loss_at(p0 + step) < loss_at(p0));
        }

        #[test]
        fn losses_nonnegative_for_finite_inputs(
            logits in proptest::collection::vec(-50.0f64..50.0, 2..6),
            y in -1.0f64..1.0, r in -5.0f64..5.0,
        ) {
            prop_assert!(cross_entropy(&logits, 0).unwrap() >= 0.0);
            prop_assert!(contextual_ce(&[logits.clone(), logits.clone()], 1).unwrap() >= 0.0);
            prop_assert!(mse(y, r) >= 0.0);
            prop_assert!(contextual_mse(y, &[r, -r]) >= 0.0);
        }

        #[test]
        fn contextual_mse_equals_mse_over_pairs(
            y in -1.0f64..1.0, preds in proptest::collection::vec(-2.0f64..2.0, 1..10),
        ) {
            let pairs: Vec<(f64, f64)> = preds.iter().map(|&r| (y, r)).collect();
            prop_assert!((contextual_mse(y, &preds) - mse_batch(&pairs).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn mixing_tends_to_primary_as_lambda_tends_to_one(ce in 0.0f64..5.0, cce in 0.0f64..5.0) {
            let near_one = MixWeight::new(1.0 - 1e-9).unwrap();
            prop_assert!((contextual_classification_loss(ce, cce, near_one) - ce).abs() < 1e-8);
        }
    }
}

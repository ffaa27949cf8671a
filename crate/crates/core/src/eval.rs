//! Metrics, significance testing, few-shot curves and context-bucketed F1.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::graph::{Label, Post, PostId, SocialGraph};
use crate::model::{predict_class, Encoder, Model};
use crate::rng::stream;
use crate::sampling::fewshot_subsample;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: b, found: a });
    }
    if a == 0 {
        return Err(Error::InvalidArgument("no examples".into()));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// `k x k` counts, rows indexed by gold class and columns by prediction.
pub fn confusion_matrix(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds.len(), golds.len())?;
    let mut m = vec![vec![0; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= k || g >= k {
            return Err(Error::InvalidArgument(format!("label {} out of range for {k} classes", p.max(g))));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// F1 of every class from a confusion matrix; a class that never occurs in
/// golds or predictions scores 0.
pub fn f1_from_confusion(m: &[Vec<usize>]) -> Vec<f64> {
    let k = m.len();
    (0..k)
        .map(|c| {
            let tp = m[c][c] as f64;
            let fp = (0..k).filter(|&g| g != c).map(|g| m[g][c]).sum::<usize>() as f64;
            let fn_ = (0..k).filter(|&p| p != c).map(|p| m[c][p]).sum::<usize>() as f64;
            let denom = 2.0 * tp + fp + fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

pub fn per_class_f1(preds: &[usize], golds: &[usize], k: usize) -> Result<Vec<f64>> {
    Ok(f1_from_confusion(&confusion_matrix(preds, golds, k)?))
}

/// Unweighted mean of per-class F1 over all `k` classes.
pub fn macro_f1(preds: &[usize], golds: &[usize], k: usize) -> Result<f64> {
    let f = per_class_f1(preds, golds, k)?;
    Ok(f.iter().sum::<f64>() / k as f64)
}

/// F1 of one class treated as positive.
pub fn binary_f1(preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let p: Vec<usize> = preds.iter().map(|&x| usize::from(x == positive)).collect();
    let g: Vec<usize> = golds.iter().map(|&x| usize::from(x == positive)).collect();
    Ok(per_class_f1(&p, &g, 2)?[1])
}

pub fn mse_metric(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    Ok(preds.iter().zip(golds).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / golds.len() as f64)
}

pub fn mae_metric(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    Ok(preds.iter().zip(golds).map(|(p, g)| (p - g).abs()).sum::<f64>() / golds.len() as f64)
}

/// Scores are compared on the label range `[-1, 1]`.
pub fn clamp_scores(preds: &[f64]) -> Vec<f64> {
    preds.iter().map(|p| p.clamp(-1.0, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest pooled size for which the null distribution is enumerated.
pub const EXACT_LIMIT: usize = 20;

fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for item in &pooled[i..=j] {
            ranks[item.1] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

fn u_of_first(ranks: &[f64], n_a: usize) -> f64 {
    ranks[..n_a].iter().sum::<f64>() - (n_a * (n_a + 1)) as f64 / 2.0
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Mann-Whitney U needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("Mann-Whitney U needs finite values".into()));
    }
    Ok(())
}

/// Two-sided test: exact permutation distribution of the midrank U statistic
/// when the pooled size is at most [`EXACT_LIMIT`], normal approximation with
/// tie and continuity correction above.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.len() + b.len() <= EXACT_LIMIT {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// `P(|U - mu| >= |U_obs - mu|)` over every split of the pooled ranks.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check_samples(a, b)?;
    let (n_a, n) = (a.len(), a.len() + b.len());
    if n > 30 {
        return Err(Error::InvalidArgument(format!("exact enumeration over {n} values is too large")));
    }
    let (ranks, _) = midranks(a, b);
    let u_obs = u_of_first(&ranks, n_a);
    let mu = (n_a * b.len()) as f64 / 2.0;
    let dev = (u_obs - mu).abs() - 1e-9;
    let offset = (n_a * (n_a + 1)) as f64 / 2.0;
    let (mut hits, mut total) = (0u64, 0u64);
    // walk all n_a-subsets of positions in lexicographic order
    let mut idx: Vec<usize> = (0..n_a).collect();
    loop {
        let u = idx.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
        total += 1;
        if (u - mu).abs() >= dev {
            hits += 1;
        }
        let mut i = n_a;
        while i > 0 && idx[i - 1] == n - n_a + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..n_a {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(MannWhitney { u: u_obs, p_value: hits as f64 / total as f64, exact: true })
}

pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check_samples(a, b)?;
    let (n_a, n_b) = (a.len() as f64, b.len() as f64);
    let n = n_a + n_b;
    let (ranks, ties) = midranks(a, b);
    let u = u_of_first(&ranks, a.len());
    let mu = n_a * n_b / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0)).max(1.0);
    let var = n_a * n_b / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(MannWhitney { u, p_value: 1.0, exact: false });
    }
    let z = (((u - mu).abs() - 0.5).max(0.0)) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(MannWhitney { u, p_value: p, exact: false })
}

/// One bucket of the context breakdown. `macro_f1` is absent when the bucket
/// holds no test post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub user_bucket: Option<String>,
    pub thread_bucket: Option<String>,
    pub n: usize,
    pub macro_f1: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Bucket boundaries on a context size: bucket `i` holds sizes in
/// `(upper[i-1], upper[i]]`, plus a final open bucket above the last bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buckets {
    pub upper: Vec<usize>,
}

impl Buckets {
    pub fn new(upper: Vec<usize>) -> Result<Self> {
        if upper.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("bucket bounds must increase".into()));
        }
        Ok(Self { upper })
    }

    /// `{0, 1-10, >10}`
    pub fn user_default() -> Self {
        Self { upper: vec![0, 10] }
    }

    /// `{0, 1-5, >5}`
    pub fn thread_default() -> Self {
        Self { upper: vec![0, 5] }
    }

    /// A single bucket covering every size.
    pub fn all() -> Self {
        Self { upper: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.upper.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, size: usize) -> usize {
        self.upper.iter().position(|&u| size <= u).unwrap_or(self.upper.len())
    }

    pub fn label(&self, i: usize) -> String {
        let lo = if i == 0 { 0 } else { self.upper[i - 1] + 1 };
        match self.upper.get(i) {
            None if i == 0 => "all".to_owned(),
            None => format!(">{}", self.upper[i - 1]),
            Some(&hi) if hi == lo => format!("{lo}"),
            Some(&hi) => format!("{lo}-{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBreakdown {
    /// Marginal buckets by the author's other posts.
    pub by_user: Vec<BucketResult>,
    /// Marginal buckets by the other posts in the thread.
    pub by_thread: Vec<BucketResult>,
    /// Every user bucket crossed with every thread bucket.
    pub grid: Vec<BucketResult>,
}

/// Macro-F1 inside buckets of available user context (other posts by the
/// author) and thread context (other posts in the thread).
pub fn context_bucket_f1(
    preds: &[usize],
    golds: &[usize],
    graph: &SocialGraph,
    test_posts: &[PostId],
    user_buckets: &Buckets,
    thread_buckets: &Buckets,
    k: usize,
) -> Result<ContextBreakdown> {
    check_lengths(preds.len(), golds.len())?;
    check_lengths(test_posts.len(), golds.len())?;
    let missing: Vec<String> = test_posts.iter().filter(|id| graph.post(id).is_none()).map(|id| id.0.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::UnresolvedPosts(missing));
    }
    let none = HashSet::new();
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(test_posts.len());
    for id in test_posts {
        let post = graph.post(id).expect("checked above");
        let u = graph.user_posts(&post.author, &none)?.len() - 1;
        let t = graph.thread_posts(&post.thread, &none)?.len() - 1;
        cells.push((user_buckets.index(u), thread_buckets.index(t)));
    }
    let bucket = |keep: &dyn Fn(usize, usize) -> bool, user: Option<String>, thread: Option<String>| -> BucketResult {
        let mut confusion = vec![vec![0; k]; k];
        let mut n = 0;
        for ((&p, &g), &(u, t)) in preds.iter().zip(golds).zip(&cells) {
            if keep(u, t) {
                confusion[g][p] += 1;
                n += 1;
            }
        }
        let macro_f1 = (n > 0).then(|| f1_from_confusion(&confusion).iter().sum::<f64>() / k as f64);
        BucketResult { user_bucket: user, thread_bucket: thread, n, macro_f1, confusion }
    };
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= k || g >= k {
            return Err(Error::InvalidArgument(format!("label {} out of range for {k} classes", p.max(g))));
        }
    }
    let by_user = (0..user_buckets.len()).map(|i| bucket(&|u, _| u == i, Some(user_buckets.label(i)), None)).collect();
    let by_thread =
        (0..thread_buckets.len()).map(|j| bucket(&|_, t| t == j, None, Some(thread_buckets.label(j)))).collect();
    let mut grid = Vec::new();
    for i in 0..user_buckets.len() {
        for j in 0..thread_buckets.len() {
            grid.push(bucket(&|u, t| u == i && t == j, Some(user_buckets.label(i)), Some(thread_buckets.label(j))));
        }
    }
    Ok(ContextBreakdown { by_user, by_thread, grid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub metric: f64,
    pub seed: u64,
}

/// For each fraction and seed: subsample the training set uniformly, hand it
/// to `trainer` (which trains a fresh model and returns its test metric) and
/// record the result.
pub fn fewshot_curve<T, F>(fractions: &[f64], seeds: &[u64], train_set: &[T], mut trainer: F) -> Result<Vec<CurvePoint>>
where
    T: Clone,
    F: FnMut(&[T], f64, u64) -> Result<f64>,
{
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {f} not in (0, 1]")));
    }
    let mut out = Vec::with_capacity(fractions.len() * seeds.len());
    for &fraction in fractions {
        for &seed in seeds {
            let wrap = |e| Error::FewShot { fraction, source: Box::new(e) };
            let subset = fewshot_subsample(train_set, fraction, &mut stream(seed, &format!("fewshot/{fraction}")))
                .map_err(wrap)?;
            let metric = trainer(&subset, fraction, seed).map_err(wrap)?;
            out.push(CurvePoint { fraction, metric, seed });
        }
    }
    Ok(out)
}

/// CSV with header `fraction,metric,seed`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_f1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    /// On predictions clamped to `[-1, 1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_buckets: Option<ContextBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<Vec<CurvePoint>>,
}

impl MetricsReport {
    fn empty(n: usize) -> Self {
        Self {
            n_examples: n,
            accuracy: None,
            macro_f1: None,
            per_class_f1: None,
            confusion: None,
            mse: None,
            mae: None,
            raw_mse: None,
            raw_mae: None,
            context_buckets: None,
            fewshot: None,
        }
    }

    pub fn classification(preds: &[usize], golds: &[usize], k: usize) -> Result<Self> {
        let confusion = confusion_matrix(preds, golds, k)?;
        let f1 = f1_from_confusion(&confusion);
        Ok(Self {
            accuracy: Some(accuracy(preds, golds)?),
            macro_f1: Some(f1.iter().sum::<f64>() / k as f64),
            per_class_f1: Some(f1),
            confusion: Some(confusion),
            ..Self::empty(golds.len())
        })
    }

    pub fn regression(raw_preds: &[f64], golds: &[f64]) -> Result<Self> {
        let clamped = clamp_scores(raw_preds);
        Ok(Self {
            mse: Some(mse_metric(&clamped, golds)?),
            mae: Some(mae_metric(&clamped, golds)?),
            raw_mse: Some(mse_metric(raw_preds, golds)?),
            raw_mae: Some(mae_metric(raw_preds, golds)?),
            ..Self::empty(golds.len())
        })
    }
}

/// Class predictions for a batch of texts: encode, classify, argmax.
pub fn predict_classes<E: Encoder>(model: &Model<E>, texts: &[&str]) -> Result<Vec<usize>> {
    texts.iter().map(|t| Ok(predict_class(&model.classify(&model.encode(t))?))).collect()
}

pub fn predict_scores<E: Encoder>(model: &Model<E>, texts: &[&str]) -> Result<Vec<f64>> {
    texts.iter().map(|t| model.regress(&model.encode(t))).collect()
}

/// Evaluates `model` on labeled posts, using each post's own label as gold.
pub fn evaluate<E: Encoder>(model: &Model<E>, posts: &[Post], num_classes: usize) -> Result<MetricsReport> {
    let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
    match model.task() {
        crate::config::TaskKind::Classification => {
            let golds = posts
                .iter()
                .map(|p| match p.label {
                    Some(Label::Class(c)) => Ok(c),
                    _ => Err(Error::MissingLabel(p.id.0.clone())),
                })
                .collect::<Result<Vec<_>>>()?;
            MetricsReport::classification(&predict_classes(model, &texts)?, &golds, num_classes)
        }
        crate::config::TaskKind::Regression => {
            let golds = posts
                .iter()
                .map(|p| match p.label {
                    Some(Label::Score(s)) => Ok(s),
                    _ => Err(Error::MissingLabel(p.id.0.clone())),
                })
                .collect::<Result<Vec<_>>>()?;
            MetricsReport::regression(&predict_scores(model, &texts)?, &golds)
        }
    }
}

/// Uniform random labels, a reference point for the metrics.
pub fn random_baseline<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    use super::*;

    /// Hand-counted F1 from precision and recall.
    fn f1_oracle(preds: &[usize], golds: &[usize], c: usize) -> f64 {
        let tp = preds.iter().zip(golds).filter(|(&p, &g)| p == c && g == c).count() as f64;
        let pp = preds.iter().filter(|&&p| p == c).count() as f64;
        let gp = golds.iter().filter(|&&g| g == c).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let (prec, rec) = (tp / pp, tp / gp);
        2.0 * prec * rec / (prec + rec)
    }

    #[test]
    fn reference_classification_metrics() {
        let preds = [0, 0, 1, 1];
        let golds = [0, 1, 1, 1];
        assert_eq!(accuracy(&preds, &golds).unwrap(), 0.75);
        let f = per_class_f1(&preds, &golds, 2).unwrap();
        assert_abs_diff_eq!(f[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(f[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], f1_oracle(&preds, &golds, 1), epsilon = 1e-12);
        assert_abs_diff_eq!(macro_f1(&preds, &golds, 2).unwrap(), 0.7333, epsilon = 1e-4);
        assert_abs_diff_eq!(macro_f1(&preds, &golds, 2).unwrap(), (0.8 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let golds = [0, 1, 2, 0, 1, 2];
        assert_eq!(accuracy(&golds, &golds).unwrap(), 1.0);
        assert_eq!(macro_f1(&golds, &golds, 3).unwrap(), 1.0);
        assert_eq!(binary_f1(&golds, &golds, 2).unwrap(), 1.0);
        assert_abs_diff_eq!(accuracy(&[1; 6], &golds).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        // a class absent from both sides counts as 0
        assert_eq!(macro_f1(&[0, 0], &[0, 0], 2).unwrap(), 0.5);
    }

    #[test]
    fn reference_regression_metrics() {
        assert_eq!(mse_metric(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert_eq!(mse_metric(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(mae_metric(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(mse_metric(&[0.5, -0.3], &[0.2, 0.1]).unwrap(), 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(mae_metric(&[0.5, -0.3], &[0.2, 0.1]).unwrap(), 0.35, epsilon = 1e-12);
        assert!(mae_metric(&[0.0], &[]).is_err());
        let r = MetricsReport::regression(&[2.0], &[1.0]).unwrap();
        assert_eq!(r.mse, Some(0.0));
        assert_eq!(r.raw_mse, Some(1.0));
    }

    /// Two-sided exact p by listing every split of the pooled values.
    fn exact_oracle(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u = |xs: &[f64], ys: &[f64]| -> f64 {
            let mut s = 0.0;
            for x in xs {
                for y in ys {
                    s += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
                }
            }
            s
        };
        let obs = u(a, b);
        let mu = (a.len() * b.len()) as f64 / 2.0;
        let (mut hits, mut total) = (0, 0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let xs: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
            let ys: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
            total += 1;
            if (u(&xs, &ys) - mu).abs() >= (obs - mu).abs() - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn mann_whitney_reference_values() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert_abs_diff_eq!(r.p_value, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, exact_oracle(&[1.0, 2.0], &[3.0, 4.0]), epsilon = 1e-12);

        let same = [0.61, 0.64, 0.66, 0.7];
        assert_eq!(mann_whitney_u(&same, &same).unwrap().p_value, 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());

        // interleaved distinct values: a and b have the same rank sum
        let r = mann_whitney_u(&[1.0, 4.0, 5.0, 8.0], &[2.0, 3.0, 6.0, 7.0]).unwrap();
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..15).map(|i| i as f64 + 7.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.05);
        let tied = vec![1.0; 12];
        assert_eq!(mann_whitney_normal(&tied, &tied).unwrap().p_value, 1.0);
    }

    proptest! {
        #[test]
        fn exact_matches_subset_oracle(
            a in proptest::collection::vec(0u8..6, 1..6),
            b in proptest::collection::vec(0u8..6, 1..6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = mann_whitney_exact(&a, &b).unwrap();
            prop_assert!((r.p_value - exact_oracle(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn swapping_samples_mirrors_u(
            a in proptest::collection::vec(-50i32..50, 1..15),
            b in proptest::collection::vec(-50i32..50, 1..15),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn exact_and_normal_agree_without_ties(seed in 0u64..1000) {
            let mut values: Vec<f64> = (0..20).map(|i| i as f64).collect();
            values.shuffle(&mut stream(seed, "mw"));
            let (a, b) = values.split_at(10);
            let e = mann_whitney_exact(a, b).unwrap();
            let n = mann_whitney_normal(a, b).unwrap();
            prop_assert!((e.p_value - n.p_value).abs() <= 0.02, "{} vs {}", e.p_value, n.p_value);
        }

        #[test]
        fn metrics_ignore_consistent_permutation(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40),
            seed in 0u64..1000,
        ) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut stream(seed, "perm"));
            let (sp, sg): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&sp, &sg).unwrap());
            prop_assert!((macro_f1(&p, &g, 3).unwrap() - macro_f1(&sp, &sg, 3).unwrap()).abs() < 1e-12);
            let f = macro_f1(&p, &g, 3).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            for c in 0..3 {
                prop_assert!((per_class_f1(&p, &g, 3).unwrap()[c] - f1_oracle(&p, &g, c)).abs() < 1e-12);
            }
        }

        #[test]
        fn binary_macro_is_mean_of_both_sides(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..40)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = macro_f1(&p, &g, 2).unwrap();
            let b = (binary_f1(&p, &g, 1).unwrap() + binary_f1(&p, &g, 0).unwrap()) / 2.0;
            prop_assert!((m - b).abs() < 1e-12);
        }
    }

    fn bucket_graph() -> (SocialGraph, Vec<PostId>, Vec<usize>, Vec<usize>) {
        let posts = crate::synthetic::random_records(300, 25, 40, 3);
        let graph = SocialGraph::from_posts(posts).unwrap();
        let ids: Vec<PostId> = graph.posts().iter().step_by(2).map(|p| p.id.clone()).collect();
        let mut rng = stream(5, "bucket");
        let golds = random_baseline(ids.len(), 3, &mut rng);
        let preds = golds.iter().map(|&g| if rng.gen_bool(0.7) { g } else { rng.gen_range(0..3) }).collect();
        (graph, ids, preds, golds)
    }

    #[test]
    fn single_bucket_equals_global() {
        let (graph, ids, preds, golds) = bucket_graph();
        let b = context_bucket_f1(&preds, &golds, &graph, &ids, &Buckets::all(), &Buckets::all(), 3).unwrap();
        assert_eq!(b.grid.len(), 1);
        assert_eq!(b.grid[0].macro_f1.unwrap(), macro_f1(&preds, &golds, 3).unwrap());
        assert_eq!(b.grid[0].user_bucket.as_deref(), Some("all"));
    }

    #[test]
    fn bucket_confusions_add_up_to_global() {
        let (graph, ids, preds, golds) = bucket_graph();
        let b = context_bucket_f1(&preds, &golds, &graph, &ids, &Buckets::user_default(), &Buckets::thread_default(), 3)
            .unwrap();
        let global = confusion_matrix(&preds, &golds, 3).unwrap();
        for parts in [&b.by_user, &b.by_thread, &b.grid] {
            let mut sum = vec![vec![0; 3]; 3];
            for r in parts.iter() {
                for (row, add) in sum.iter_mut().zip(&r.confusion) {
                    for (x, y) in row.iter_mut().zip(add) {
                        *x += y;
                    }
                }
            }
            assert_eq!(sum, global);
        }
        assert_eq!(b.by_user.iter().map(|r| r.n).sum::<usize>(), ids.len());
        assert_eq!(Buckets::user_default().label(1), "1-10");
        assert_eq!(Buckets::user_default().label(2), ">10");
        assert_eq!(Buckets::user_default().label(0), "0");
    }

    #[test]
    fn empty_bucket_is_absent_and_unknown_posts_listed() {
        let posts = vec![Post::new("a", "u", "t1", "x"), Post::new("b", "u", "t2", "y")];
        let graph = SocialGraph::from_posts(posts).unwrap();
        let ids: Vec<PostId> = vec!["a".into(), "b".into()];
        let b = context_bucket_f1(&[0, 1], &[0, 1], &graph, &ids, &Buckets::user_default(), &Buckets::thread_default(), 2)
            .unwrap();
        // both posts have one timeline neighbour and no thread neighbour
        assert_eq!(b.by_user[1].n, 2);
        assert_eq!(b.by_user[0].macro_f1, None);
        assert_eq!(b.by_user[2].macro_f1, None);
        let bad: Vec<PostId> = vec!["a".into(), "zz".into()];
        match context_bucket_f1(&[0, 1], &[0, 1], &graph, &bad, &Buckets::all(), &Buckets::all(), 2) {
            Err(Error::UnresolvedPosts(ids)) => assert_eq!(ids, vec!["zz".to_owned()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fewshot_curve_points_and_csv() {
        let items: Vec<usize> = (0..100).collect();
        let curve = fewshot_curve(&[1.0], &[3], &items, |s, _, _| Ok(s.len() as f64)).unwrap();
        assert_eq!(curve, vec![CurvePoint { fraction: 1.0, metric: 100.0, seed: 3 }]);
        let run = || fewshot_curve(&[0.02, 0.2], &[1, 2], &items, |s, _, _| Ok(s.iter().sum::<usize>() as f64)).unwrap();
        assert_eq!(run(), run());
        assert!(fewshot_curve(&[0.0], &[1], &items, |_, _, _| Ok(0.0)).is_err());
        let err = fewshot_curve(&[0.5], &[1], &items, |_, _, _| Err(Error::InvalidArgument("boom".into()))).unwrap_err();
        assert!(matches!(err, Error::FewShot { fraction, .. } if fraction == 0.5));
        let mut buf = Vec::new();
        write_curve_csv(&run(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fraction,metric,seed\n0.02,"));
        assert_eq!(text.lines().count(), 5);
    }
}

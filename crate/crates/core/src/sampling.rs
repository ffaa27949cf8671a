//! Stochastic selection procedures: user-anchored contrastive sets, the
//! label-aware auxiliary set, context sets, proxy class labels for scores and
//! few-shot subsets.
//!
//! Every sampler is a pure function of its inputs and the rng handle.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Post, PostId, SocialGraph, UserId};

/// Anchor author at index 0 followed by `k` distinct other users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSet {
    pub users: Vec<UserId>,
}

impl UserSet {
    pub fn k(&self) -> usize {
        self.users.len() - 1
    }
}

/// One post per user of the paired [`UserSet`]; index 0 is the positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostSet {
    pub posts: Vec<PostId>,
}

/// Same-class positive at index 0, then two posts from each other class in
/// ascending class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPostSet {
    pub posts: Vec<PostId>,
    /// Class of each entry, parallel to `posts`.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSet {
    pub thread_part: Vec<PostId>,
    pub user_part: Vec<PostId>,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.thread_part.len() + self.user_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &PostId> {
        self.thread_part.iter().chain(&self.user_part)
    }
}

/// Whether `anchor` can serve as a contrastive anchor, i.e. its author has
/// another post to act as positive.
pub fn is_ua_eligible(graph: &SocialGraph, anchor: &Post) -> bool {
    graph
        .user_post_indices(&anchor.author)
        .is_some_and(|idx| idx.len() >= 2)
}

/// Draws `k` users uniformly without replacement from everyone except the
/// anchor's author, who is placed first.
pub fn sample_user_set<R: Rng + ?Sized>(
    graph: &SocialGraph,
    anchor: &Post,
    k: usize,
    rng: &mut R,
) -> Result<UserSet> {
    let n = graph.user_count();
    if k >= n {
        return Err(Error::Sampling(format!("k = {k} negatives needs more than {n} users")));
    }
    if !is_ua_eligible(graph, anchor) {
        return Err(Error::IneligibleAnchor(anchor.id.0.clone()));
    }
    let users = graph.users();
    let author_pos = users
        .iter()
        .position(|u| *u == anchor.author)
        .ok_or_else(|| Error::UnknownUser(anchor.author.0.clone()))?;
    let mut out = Vec::with_capacity(k + 1);
    out.push(anchor.author.clone());
    for i in index::sample(rng, n - 1, k) {
        let j = if i < author_pos { i } else { i + 1 };
        out.push(users[j].clone());
    }
    Ok(UserSet { users: out })
}

/// One post per user: a uniformly drawn other post of the author as positive,
/// and a uniformly drawn post of each negative user.
pub fn sample_post_set<R: Rng + ?Sized>(
    graph: &SocialGraph,
    anchor: &Post,
    user_set: &UserSet,
    rng: &mut R,
) -> Result<PostSet> {
    let mut posts = Vec::with_capacity(user_set.users.len());
    for (j, user) in user_set.users.iter().enumerate() {
        let idx = graph
            .user_post_indices(user)
            .ok_or_else(|| Error::UnknownUser(user.0.clone()))?;
        let id = if j == 0 {
            let candidates: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| graph.post_at(i).id != anchor.id)
                .collect();
            if candidates.is_empty() {
                return Err(Error::IneligibleAnchor(anchor.id.0.clone()));
            }
            &graph.post_at(candidates[rng.gen_range(0..candidates.len())]).id
        } else {
            if idx.is_empty() {
                return Err(Error::Sampling(format!("user `{user}` has no posts")));
            }
            &graph.post_at(idx[rng.gen_range(0..idx.len())]).id
        };
        posts.push(id.clone());
    }
    Ok(PostSet { posts })
}

/// Labeled posts grouped by class for auxiliary sampling.
#[derive(Debug, Clone)]
pub struct ClassIndex<'a> {
    by_class: Vec<Vec<&'a Post>>,
}

impl<'a> ClassIndex<'a> {
    /// Every class in `0..num_classes` needs at least two labeled posts.
    pub fn new(train_set: &'a [Post], num_classes: usize) -> Result<Self> {
        Self::from_labeled(train_set.iter(), num_classes, |p| p.label.and_then(|l| l.class()))
    }

    /// Same as [`ClassIndex::new`] with classes supplied by `class_of`
    /// (used for proxy labels of scored posts).
    pub fn from_labeled<I, F>(posts: I, num_classes: usize, class_of: F) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Post>,
        F: Fn(&Post) -> Option<usize>,
    {
        let mut by_class: Vec<Vec<&Post>> = vec![Vec::new(); num_classes];
        for post in posts {
            let class = class_of(post).ok_or_else(|| Error::MissingLabel(post.id.0.clone()))?;
            if class >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "post `{}` has class {class} >= {num_classes}",
                    post.id
                )));
            }
            by_class[class].push(post);
        }
        for (class, posts) in by_class.iter().enumerate() {
            if posts.len() < 2 {
                return Err(Error::ClassTooSmall { class, found: posts.len(), needed: 2 });
            }
        }
        Ok(Self { by_class })
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, anchor: &PostId, anchor_class: usize, rng: &mut R) -> Result<AuxPostSet> {
        let same = self
            .by_class
            .get(anchor_class)
            .ok_or_else(|| Error::InvalidArgument(format!("anchor class {anchor_class} out of range")))?;
        let positives: Vec<&Post> = same.iter().copied().filter(|p| p.id != *anchor).collect();
        if positives.is_empty() {
            return Err(Error::ClassTooSmall { class: anchor_class, found: same.len(), needed: 2 });
        }
        let n_c = self.by_class.len();
        let mut posts = Vec::with_capacity(2 * (n_c - 1) + 1);
        let mut classes = Vec::with_capacity(posts.capacity());
        posts.push(positives[rng.gen_range(0..positives.len())].id.clone());
        classes.push(anchor_class);
        for (class, members) in self.by_class.iter().enumerate() {
            if class == anchor_class {
                continue;
            }
            for i in index::sample(rng, members.len(), 2) {
                posts.push(members[i].id.clone());
                classes.push(class);
            }
        }
        Ok(AuxPostSet { posts, classes })
    }
}

/// Convenience wrapper building a [`ClassIndex`] on every call.
pub fn sample_aux_post_set<R: Rng + ?Sized>(
    train_set: &[Post],
    num_classes: usize,
    anchor: &Post,
    rng: &mut R,
) -> Result<AuxPostSet> {
    let class = anchor
        .label
        .and_then(|l| l.class())
        .ok_or_else(|| Error::MissingLabel(anchor.id.0.clone()))?;
    ClassIndex::new(train_set, num_classes)?.sample(&anchor.id, class, rng)
}

/// Up to `n_thread` posts from the anchor's thread and up to `n_user` posts
/// from its author's timeline, each drawn uniformly without replacement and
/// never including the anchor.
pub fn sample_context_set<R: Rng + ?Sized>(
    graph: &SocialGraph,
    anchor: &Post,
    n_thread: usize,
    n_user: usize,
    rng: &mut R,
) -> Result<ContextSet> {
    if graph.index_of(&anchor.id).is_none() {
        return Err(Error::UnknownPost(anchor.id.0.clone()));
    }
    let draw = |idx: &[usize], budget: usize, rng: &mut R| -> Vec<PostId> {
        let pool: Vec<&PostId> = idx
            .iter()
            .map(|&i| &graph.post_at(i).id)
            .filter(|id| **id != anchor.id)
            .collect();
        let take = budget.min(pool.len());
        index::sample(rng, pool.len(), take)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    };
    let thread_idx = graph.thread_post_indices(&anchor.thread).unwrap_or(&[]);
    let user_idx = graph.user_post_indices(&anchor.author).unwrap_or(&[]);
    let thread_part = draw(thread_idx, n_thread, rng);
    let user_part = draw(user_idx, n_user, rng);
    Ok(ContextSet { thread_part, user_part })
}

/// One-dimensional K-means cluster index for each score.
///
/// Lloyd iterations from k-means++ seeds, restarted a few times with the
/// lowest within-cluster sum of squares kept. Cluster ids are ordered by
/// ascending centroid, so labels are monotone in the score.
pub fn proxy_class_labels<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    const RESTARTS: usize = 8;
    const MAX_ITERS: usize = 300;

    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to cluster".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} clusters for {} distinct scores",
            distinct.len()
        )));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..RESTARTS {
        let mut centroids = kmeans_pp_seeds(scores, k, rng);
        for _ in 0..MAX_ITERS {
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for &s in scores {
                let c = nearest(&centroids, s);
                sums[c] += s;
                counts[c] += 1;
            }
            let mut moved = false;
            for c in 0..k {
                if counts[c] > 0 {
                    let m = sums[c] / counts[c] as f64;
                    if m != centroids[c] {
                        centroids[c] = m;
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        let sse: f64 = scores.iter().map(|&s| (s - centroids[nearest(&centroids, s)]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, centroids));
        }
    }
    let (_, mut centroids) = best.expect("at least one restart");
    centroids.sort_by(f64::total_cmp);
    Ok(scores.iter().map(|&s| nearest(&centroids, s)).collect())
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &c) in centroids.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centroids[best]).abs() {
            best = i;
        }
    }
    best
}

fn kmeans_pp_seeds<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut seeds = vec![scores[rng.gen_range(0..scores.len())]];
    while seeds.len() < k {
        let weights: Vec<f64> = scores
            .iter()
            .map(|&s| seeds.iter().map(|&c| (s - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        // k <= distinct values guarantees some positive weight remains.
        let mut target = rng.gen::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        seeds.push(scores[pick]);
    }
    seeds
}

/// Size of a few-shot subset: `ceil(fraction * n)`.
pub fn fewshot_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    // guard against 0.07 * 100 = 7.000000000000001
    let size = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if size == 0 {
        return Err(Error::InvalidArgument(format!("fraction {fraction} of {n} items is empty")));
    }
    Ok(size.min(n))
}

/// Uniform subset without replacement of size `ceil(fraction * n)`, in the
/// original order.
pub fn fewshot_subsample<T: Clone, R: Rng + ?Sized>(items: &[T], fraction: f64, rng: &mut R) -> Result<Vec<T>> {
    let size = fewshot_size(items.len(), fraction)?;
    let mut picked = index::sample(rng, items.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Class histogram helper shared by tests and reports.
pub fn class_histogram(classes: impl IntoIterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for c in classes {
        *h.entry(c).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::graph::Label;
    use crate::rng::stream;

    fn two_user_graph() -> SocialGraph {
        SocialGraph::from_posts(vec![
            Post::new("a1", "alice", "t", "x"),
            Post::new("a2", "alice", "t", "y"),
            Post::new("b1", "bob", "t", "z"),
        ])
        .unwrap()
    }

    #[test]
    fn two_users_k1_is_forced() {
        let g = two_user_graph();
        let anchor = g.post(&"a1".into()).unwrap().clone();
        for seed in 0..20 {
            let mut rng = stream(seed, "t");
            let us = sample_user_set(&g, &anchor, 1, &mut rng).unwrap();
            assert_eq!(us.users, vec![UserId::from("alice"), UserId::from("bob")]);
            let ps = sample_post_set(&g, &anchor, &us, &mut rng).unwrap();
            assert_eq!(ps.posts, vec![PostId::from("a2"), PostId::from("b1")]);
        }
    }

    #[test]
    fn k_zero_keeps_only_author() {
        let g = two_user_graph();
        let anchor = g.post(&"a1".into()).unwrap().clone();
        let mut rng = stream(1, "t");
        let us = sample_user_set(&g, &anchor, 0, &mut rng).unwrap();
        assert_eq!(us.users, vec![UserId::from("alice")]);
        assert_eq!(sample_post_set(&g, &anchor, &us, &mut rng).unwrap().posts.len(), 1);
    }

    #[test]
    fn user_set_errors() {
        let g = two_user_graph();
        let mut rng = stream(1, "t");
        let anchor = g.post(&"a1".into()).unwrap().clone();
        assert!(matches!(sample_user_set(&g, &anchor, 2, &mut rng), Err(Error::Sampling(_))));
        let lonely = g.post(&"b1".into()).unwrap().clone();
        assert!(matches!(sample_user_set(&g, &lonely, 1, &mut rng), Err(Error::IneligibleAnchor(_))));
        let us = UserSet { users: vec!["bob".into()] };
        assert!(matches!(sample_post_set(&g, &lonely, &us, &mut rng), Err(Error::IneligibleAnchor(_))));
    }

    fn labeled(n_per_class: &[usize]) -> Vec<Post> {
        let mut out = Vec::new();
        for (c, &n) in n_per_class.iter().enumerate() {
            for i in 0..n {
                out.push(Post::new(&format!("c{c}p{i}"), &format!("u{i}"), "t", "x").with_label(Label::Class(c)));
            }
        }
        out
    }

    #[test]
    fn aux_set_minimal_two_classes() {
        let train = labeled(&[2, 2]);
        let anchor = &train[0];
        let mut rng = stream(3, "aux");
        let aux = sample_aux_post_set(&train, 2, anchor, &mut rng).unwrap();
        assert_eq!(aux.posts.len(), 3);
        assert_eq!(aux.posts[0], PostId::from("c0p1"));
        let negs: HashSet<&PostId> = aux.posts[1..].iter().collect();
        assert_eq!(negs, [PostId::from("c1p0"), PostId::from("c1p1")].iter().collect());
    }

    #[test]
    fn aux_set_three_classes_has_five_posts() {
        let train = labeled(&[4, 3, 5]);
        let index = ClassIndex::new(&train, 3).unwrap();
        for seed in 0..50 {
            let mut rng = stream(seed, "aux");
            let anchor = &train[(seed as usize) % train.len()];
            let class = anchor.label.unwrap().class().unwrap();
            let aux = index.sample(&anchor.id, class, &mut rng).unwrap();
            assert_eq!(aux.posts.len(), 5);
            assert_ne!(aux.posts[0], anchor.id);
            assert_eq!(aux.classes[0], class);
        }
    }

    #[test]
    fn aux_set_rejects_small_class() {
        let train = labeled(&[3, 1, 3]);
        assert!(matches!(
            ClassIndex::new(&train, 3),
            Err(Error::ClassTooSmall { class: 1, found: 1, needed: 2 })
        ));
    }

    #[test]
    fn context_set_edge_cases() {
        let g = SocialGraph::from_posts(vec![
            Post::new("solo", "lonely", "t0", "x"),
            Post::new("a", "u1", "t1", "x"),
            Post::new("b", "u2", "t1", "x"),
            Post::new("c", "u3", "t1", "x"),
        ])
        .unwrap();
        let mut rng = stream(0, "ctx");
        let solo = g.post(&"solo".into()).unwrap();
        assert_eq!(sample_context_set(&g, solo, 5, 5, &mut rng).unwrap().len(), 0);
        let a = g.post(&"a".into()).unwrap();
        let ctx = sample_context_set(&g, a, 5, 5, &mut rng).unwrap();
        assert_eq!(ctx.thread_part.len(), 2);
        assert!(ctx.user_part.is_empty());
        let stranger = Post::new("zz", "u1", "t1", "x");
        assert!(matches!(sample_context_set(&g, &stranger, 1, 1, &mut rng), Err(Error::UnknownPost(_))));
    }

    #[test]
    fn context_set_budget_and_membership() {
        // 10-post thread, anchor's author has 8 posts (4 of them in the thread)
        let mut posts = Vec::new();
        for i in 0..10 {
            let author = if i < 4 { "me" } else { "other" };
            posts.push(Post::new(&format!("t{i}"), author, "thread", "x"));
        }
        for i in 0..4 {
            posts.push(Post::new(&format!("e{i}"), "me", &format!("elsewhere{i}"), "x"));
        }
        let g = SocialGraph::from_posts(posts).unwrap();
        let anchor = g.post(&"t0".into()).unwrap();
        let thread: HashSet<PostId> = g.thread_posts(&anchor.thread, &HashSet::new()).unwrap().into_iter().collect();
        let timeline: HashSet<PostId> = g.user_posts(&anchor.author, &HashSet::new()).unwrap().into_iter().collect();
        for seed in 0..1000 {
            let ctx = sample_context_set(&g, anchor, 2, 1, &mut stream(seed, "ctx")).unwrap();
            assert_eq!(ctx.len(), 3);
            assert!(ctx.iter().all(|id| *id != anchor.id));
            assert!(ctx.thread_part.iter().all(|id| thread.contains(id)));
            assert!(ctx.user_part.iter().all(|id| timeline.contains(id)));
            assert_ne!(ctx.thread_part[0], ctx.thread_part[1]);
        }
    }

    #[test]
    fn proxy_labels_trivial_and_separated() {
        let mut rng = stream(0, "km");
        assert_eq!(proxy_class_labels(&[0.3, -0.2, 0.9], 1, &mut rng).unwrap(), vec![0, 0, 0]);
        assert_eq!(proxy_class_labels(&[-1.0, -0.9, 0.8, 1.0], 2, &mut rng).unwrap(), vec![0, 0, 1, 1]);
        assert!(proxy_class_labels(&[0.5, 0.5], 2, &mut rng).is_err());
        assert!(proxy_class_labels(&[], 1, &mut rng).is_err());
    }

    #[test]
    fn proxy_labels_k_equals_distinct_values() {
        let scores = [0.1, -0.4, 0.1, 0.9, -1.0];
        let labels = proxy_class_labels(&scores, 4, &mut stream(9, "km")).unwrap();
        assert_eq!(labels, vec![2, 1, 2, 3, 0]);
    }

    fn labeled_sse(scores: &[f64], labels: &[usize], k: usize) -> f64 {
        (0..k)
            .map(|c| {
                let xs: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == c).map(|(&x, _)| x).collect();
                if xs.is_empty() {
                    return 0.0;
                }
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - m).powi(2)).sum()
            })
            .sum()
    }

    /// Minimum within-cluster SSE over every assignment of points to `k`
    /// non-empty clusters, with one optimal assignment.
    fn brute_force(scores: &[f64], k: usize) -> (f64, Vec<usize>) {
        let n = scores.len();
        let mut labels = vec![0usize; n];
        let mut best = (f64::INFINITY, labels.clone());
        loop {
            let used: std::collections::HashSet<usize> = labels.iter().copied().collect();
            if used.len() == k {
                let sse = labeled_sse(scores, &labels, k);
                if sse < best.0 - 1e-12 {
                    best = (sse, labels.clone());
                }
            }
            let mut i = 0;
            while i < n && labels[i] == k - 1 {
                labels[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
            labels[i] += 1;
        }
    }

    #[test]
    fn proxy_labels_match_exhaustive_partition() {
        let scores = [-1.0, -0.9, 0.8, 1.0];
        let (_, best) = brute_force(&scores, 2);
        // the oracle's cluster ids are arbitrary; the split is what matters
        assert_eq!(best[0], best[1]);
        assert_eq!(best[2], best[3]);
        assert_ne!(best[0], best[2]);
        assert_eq!(proxy_class_labels(&scores, 2, &mut stream(1, "km")).unwrap(), vec![0, 0, 1, 1]);
    }

    proptest! {
        #[test]
        fn proxy_labels_are_monotone_like_the_optimum(
            raw in proptest::collection::vec(-100i32..=100, 2..=10),
            k in 1usize..4,
            seed in 0u64..1000,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&x| x as f64 / 100.0).collect();
            let mut distinct = scores.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assume!(k <= distinct.len());
            let labels = proxy_class_labels(&scores, k, &mut stream(seed, "km")).unwrap();
            let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(labels.iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            prop_assert!(labels.iter().all(|&l| l < k));

            // the exhaustive optimum is made of intervals too
            let (opt_sse, opt) = brute_force(&scores, k);
            let mut sorted: Vec<(f64, usize)> = scores.iter().copied().zip(opt.iter().copied()).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut seen = Vec::new();
            for (_, l) in sorted {
                if seen.last() != Some(&l) {
                    prop_assert!(!seen.contains(&l), "optimal cluster {} is not an interval", l);
                    seen.push(l);
                }
            }
            prop_assert!(labeled_sse(&scores, &labels, k) >= opt_sse - 1e-9);
        }

        #[test]
        fn reseeding_reproduces_samples(seed in 0u64..10_000) {
            let g = SocialGraph::from_posts(crate::synthetic::random_records(80, 12, 6, 4)).unwrap();
            let anchor = g.posts().iter().find(|p| is_ua_eligible(&g, p)).unwrap();
            let draw = |s| {
                let mut rng = stream(s, "x");
                let us = sample_user_set(&g, anchor, 3, &mut rng).unwrap();
                let ps = sample_post_set(&g, anchor, &us, &mut rng).unwrap();
                let ctx = sample_context_set(&g, anchor, 2, 2, &mut rng).unwrap();
                (us, ps, ctx)
            };
            prop_assert_eq!(draw(seed), draw(seed));
        }

        #[test]
        fn post_sets_follow_user_sets(seed in 0u64..10_000) {
            let g = SocialGraph::from_posts(crate::synthetic::random_records(120, 15, 8, seed % 7)).unwrap();
            let eligible: Vec<&Post> = g.posts().iter().filter(|p| is_ua_eligible(&g, p)).collect();
            let mut rng = stream(seed, "ps");
            let anchor = eligible[rng.gen_range(0..eligible.len())];
            let us = sample_user_set(&g, anchor, 4, &mut rng).unwrap();
            let distinct: HashSet<&UserId> = us.users.iter().collect();
            prop_assert_eq!(distinct.len(), 5);
            let ps = sample_post_set(&g, anchor, &us, &mut rng).unwrap();
            prop_assert_ne!(&ps.posts[0], &anchor.id);
            for (id, user) in ps.posts.iter().zip(&us.users) {
                prop_assert_eq!(&g.post(id).unwrap().author, user);
            }
        }
    }

    #[test]
    fn fewshot_sizes_and_errors() {
        let items: Vec<usize> = (0..100).collect();
        let mut rng = stream(0, "fs");
        assert_eq!(fewshot_subsample(&items, 1.0, &mut rng).unwrap(), items);
        assert_eq!(fewshot_subsample(&items, 0.02, &mut rng).unwrap().len(), 2);
        assert_eq!(fewshot_size(100, 0.07).unwrap(), 7);
        assert_eq!(fewshot_size(10, 0.01).unwrap(), 1);
        assert!(fewshot_subsample(&items, 0.0, &mut rng).is_err());
        assert!(fewshot_subsample(&items, 1.5, &mut rng).is_err());
        assert!(fewshot_subsample::<usize, _>(&[], 0.5, &mut rng).is_err());
    }
}

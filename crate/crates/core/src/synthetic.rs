//! Seeded synthetic corpora for tests, demos and directional checks.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Label, Post, PostId, SocialGraph};
use crate::rng::stream;

fn words<R: Rng + ?Sized>(pool: &[String], n: usize, rng: &mut R) -> String {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].as_str()).collect::<Vec<_>>().join(" ")
}

/// `n` posts spread over `users` authors and `threads` threads. The first
/// `users` posts go one to each author so every author exists when
/// `n >= users`. About a third carry a class label in `0..3` and some reply
/// to an earlier post of their thread.
pub fn random_records(n: usize, users: usize, threads: usize, seed: u64) -> Vec<Post> {
    assert!(users > 0 && threads > 0);
    let mut rng = stream(seed, "random-records");
    let pool: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut last_in_thread: Vec<Option<usize>> = vec![None; threads];
    let mut out: Vec<Post> = Vec::with_capacity(n);
    for i in 0..n {
        let author = if i < users { i } else { rng.gen_range(0..users) };
        let thread = rng.gen_range(0..threads);
        let len = rng.gen_range(1..8);
        let mut post = Post::new(&format!("p{i}"), &format!("u{author}"), &format!("t{thread}"), &words(&pool, len, &mut rng));
        if let Some(prev) = last_in_thread[thread] {
            if rng.gen_bool(0.5) {
                post.parent = Some(out[prev].id.clone());
            }
        }
        if rng.gen_bool(1.0 / 3.0) {
            post.label = Some(Label::Class(rng.gen_range(0..3)));
        }
        last_in_thread[thread] = Some(i);
        out.push(post);
    }
    out
}

/// Authors with disjoint vocabularies: user `j` only uses words `u{j}x{..}`.
/// Threads are assigned at random, so thread membership carries no author signal.
pub fn separable_users(users: usize, posts_per_user: usize, words_per_user: usize, seed: u64) -> SocialGraph {
    let mut rng = stream(seed, "separable-users");
    let mut posts = Vec::with_capacity(users * posts_per_user);
    for i in 0..posts_per_user {
        for u in 0..users {
            let pool: Vec<String> = (0..words_per_user).map(|w| format!("u{u}x{w}")).collect();
            let len = rng.gen_range(4..9);
            let thread = rng.gen_range(0..users * 2);
            posts.push(Post::new(&format!("u{u}p{i}"), &format!("u{u}"), &format!("t{thread}"), &words(&pool, len, &mut rng)));
        }
    }
    SocialGraph::from_posts(posts).expect("generated ids are unique")
}

/// `n` copies of a small set of fixed sentences, for memorization checks.
pub fn repeated_sentences(n: usize, distinct: usize) -> Vec<String> {
    const BASE: [&str; 5] = [
        "the cat sat on the warm mat by the door",
        "a quick brown fox jumps over the lazy dog",
        "we walked along the river until the sun went down",
        "please bring three red apples and some fresh bread",
        "my neighbour plays loud music every friday night",
    ];
    (0..n).map(|i| BASE[i % distinct.clamp(1, BASE.len())].to_owned()).collect()
}

/// Posts whose class is written in the text: class `c` posts use only words `c{c}w{..}`.
pub fn separable_classes(n: usize, num_classes: usize, seed: u64) -> Vec<Post> {
    let mut rng = stream(seed, "separable-classes");
    (0..n)
        .map(|i| {
            let c = i % num_classes;
            let pool: Vec<String> = (0..8).map(|w| format!("c{c}w{w}")).collect();
            let len = rng.gen_range(3..7);
            Post::new(&format!("s{i}"), &format!("a{}", i % 7), &format!("t{}", i % 5), &words(&pool, len, &mut rng))
                .with_label(Label::Class(c))
        })
        .collect()
}

/// Knobs of the echo-chamber generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EchoChamberSpec {
    pub num_classes: usize,
    pub threads: usize,
    pub posts_per_thread: usize,
    pub users: usize,
    /// Probability that a post's true class equals its thread's class.
    pub thread_agreement: f64,
    /// Probability that a word is drawn from the true class's cue words
    /// rather than the shared filler vocabulary.
    pub cue_rate: f64,
    pub cue_words: usize,
    pub filler_words: usize,
    pub post_len: usize,
    /// Fraction of observed labels replaced by a different class.
    pub label_noise: f64,
    pub train_fraction: f64,
}

impl Default for EchoChamberSpec {
    fn default() -> Self {
        Self {
            num_classes: 2,
            threads: 50,
            posts_per_thread: 10,
            users: 100,
            thread_agreement: 0.97,
            cue_rate: 0.25,
            cue_words: 40,
            filler_words: 300,
            post_len: 8,
            label_noise: 0.2,
            train_fraction: 0.1,
        }
    }
}

/// A labeled social graph with clustered hate, plus a train/test split.
#[derive(Debug, Clone)]
pub struct EchoChamber {
    /// Every post carries its observed (possibly noisy) label.
    pub graph: SocialGraph,
    pub train: Vec<Post>,
    /// Test posts with their clean gold labels.
    pub test: Vec<Post>,
    pub gold: Vec<usize>,
    /// Clean class of every graph post, in graph order.
    pub true_class: Vec<usize>,
}

impl EchoChamber {
    pub fn test_ids(&self) -> Vec<PostId> {
        self.test.iter().map(|p| p.id.clone()).collect()
    }
}

/// Threads have a dominant class that most of their posts share, and each
/// user mostly posts into threads of one class, so both thread and timeline
/// neighbours are informative about a post's label.
pub fn echo_chamber(spec: &EchoChamberSpec, seed: u64) -> EchoChamber {
    let k = spec.num_classes;
    assert!(k >= 2 && spec.users >= k);
    let mut rng = stream(seed, "echo-chamber");
    let cues: Vec<Vec<String>> = (0..k).map(|c| (0..spec.cue_words).map(|w| format!("k{c}q{w}")).collect()).collect();
    let filler: Vec<String> = (0..spec.filler_words).map(|w| format!("f{w}")).collect();
    let thread_class: Vec<usize> = (0..spec.threads).map(|t| t % k).collect();
    // users are split into one community per class
    let community: Vec<Vec<usize>> = (0..k).map(|c| (0..spec.users).filter(|u| u % k == c).collect()).collect();

    let mut posts = Vec::new();
    let mut gold = Vec::new();
    for (t, &tc) in thread_class.iter().enumerate() {
        for i in 0..spec.posts_per_thread {
            let class = if rng.gen_bool(spec.thread_agreement) {
                tc
            } else {
                let other = rng.gen_range(0..k - 1);
                if other >= tc { other + 1 } else { other }
            };
            let members = &community[tc];
            let author = members[rng.gen_range(0..members.len())];
            let text: Vec<&str> = (0..spec.post_len)
                .map(|_| {
                    if rng.gen_bool(spec.cue_rate) {
                        cues[class][rng.gen_range(0..spec.cue_words)].as_str()
                    } else {
                        filler[rng.gen_range(0..spec.filler_words)].as_str()
                    }
                })
                .collect();
            let observed = if rng.gen_bool(spec.label_noise) {
                let other = rng.gen_range(0..k - 1);
                if other >= class { other + 1 } else { other }
            } else {
                class
            };
            posts.push(
                Post::new(&format!("t{t}p{i}"), &format!("u{author}"), &format!("t{t}"), &text.join(" "))
                    .with_label(Label::Class(observed)),
            );
            gold.push(class);
        }
    }
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.shuffle(&mut rng);
    let n_train = crate::sampling::fewshot_size(posts.len(), spec.train_fraction).expect("valid fraction");
    let (train_idx, test_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = train_idx.iter().map(|&i| posts[i].clone()).collect();
    let test: Vec<Post> = test_idx.iter().map(|&i| posts[i].clone()).collect();
    let test_gold = test_idx.iter().map(|&i| gold[i]).collect();
    EchoChamber {
        graph: SocialGraph::from_posts(posts).expect("generated ids are unique"),
        train,
        test,
        gold: test_gold,
        true_class: gold,
    }
}

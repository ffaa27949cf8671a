//! Users, threads and posts of a social network, indexed for the samplers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TaskKind;
use crate::error::{Error, Result};
use crate::text::Preprocessor;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(PostId);
string_id!(UserId);
string_id!(ThreadId);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Score(f64),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => Some(c),
            Label::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match *self {
            Label::Score(s) => Some(s),
            Label::Class(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: PostId,
    pub author: UserId,
    pub thread: ThreadId,
    #[serde(default)]
    pub parent: Option<PostId>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Post {
    pub fn new(id: &str, author: &str, thread: &str, text: &str) -> Self {
        Self {
            id: id.into(),
            author: author.into(),
            thread: thread.into(),
            parent: None,
            text: text.to_owned(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parent = Some(parent.into());
        self
    }
}

/// Immutable post store with author and thread indices. Index lists keep
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SocialGraph {
    posts: Vec<Post>,
    by_id: HashMap<PostId, usize>,
    users: Vec<UserId>,
    user_index: HashMap<UserId, Vec<usize>>,
    threads: Vec<ThreadId>,
    thread_index: HashMap<ThreadId, Vec<usize>>,
}

impl SocialGraph {
    pub fn from_posts(posts: Vec<Post>) -> Result<Self> {
        let mut graph = SocialGraph::default();
        for post in posts {
            graph.push(post)?;
        }
        Ok(graph)
    }

    fn push(&mut self, post: Post) -> Result<()> {
        if self.by_id.contains_key(&post.id) {
            return Err(Error::DuplicatePost(post.id.0));
        }
        let idx = self.posts.len();
        self.by_id.insert(post.id.clone(), idx);
        self.user_index
            .entry(post.author.clone())
            .or_insert_with(|| {
                self.users.push(post.author.clone());
                Vec::new()
            })
            .push(idx);
        self.thread_index
            .entry(post.thread.clone())
            .or_insert_with(|| {
                self.threads.push(post.thread.clone());
                Vec::new()
            })
            .push(idx);
        self.posts.push(post);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn post(&self, id: &PostId) -> Option<&Post> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    pub fn post_at(&self, idx: usize) -> &Post {
        &self.posts[idx]
    }

    pub fn index_of(&self, id: &PostId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// Users in order of first appearance.
    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn threads(&self) -> &[ThreadId] {
        &self.threads
    }

    /// Positions (into [`posts`](Self::posts)) of everything `user` wrote.
    pub fn user_post_indices(&self, user: &UserId) -> Option<&[usize]> {
        self.user_index.get(user).map(Vec::as_slice)
    }

    pub fn thread_post_indices(&self, thread: &ThreadId) -> Option<&[usize]> {
        self.thread_index.get(thread).map(Vec::as_slice)
    }

    /// Posts authored by `user` minus `exclude`, in insertion order. An
    /// unknown user is an error: samplers only ask about users they saw.
    pub fn user_posts(&self, user: &UserId, exclude: &HashSet<PostId>) -> Result<Vec<PostId>> {
        let idx = self
            .user_post_indices(user)
            .ok_or_else(|| Error::UnknownUser(user.0.clone()))?;
        Ok(self.filter_ids(idx, exclude))
    }

    pub fn thread_posts(&self, thread: &ThreadId, exclude: &HashSet<PostId>) -> Result<Vec<PostId>> {
        let idx = self
            .thread_post_indices(thread)
            .ok_or_else(|| Error::UnknownThread(thread.0.clone()))?;
        Ok(self.filter_ids(idx, exclude))
    }

    fn filter_ids(&self, idx: &[usize], exclude: &HashSet<PostId>) -> Vec<PostId> {
        idx.iter()
            .map(|&i| &self.posts[i].id)
            .filter(|id| !exclude.contains(*id))
            .cloned()
            .collect()
    }

    pub fn labeled_posts(&self) -> impl Iterator<Item = &Post> {
        self.posts.iter().filter(|p| p.label.is_some())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_snapshot(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_owned(),
            version: SNAPSHOT_VERSION,
            posts: self.posts.len(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for post in &self.posts {
            serde_json::to_writer(&mut *out, post)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(BufReader::new(file))
    }

    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty snapshot".into()))?
            .map_err(|e| Error::io("<snapshot>", e))?;
        let header: SnapshotHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(Error::Format(format!("unknown format `{}`", header.format)));
        }
        if header.version != SNAPSHOT_VERSION {
            return Err(Error::Version { found: header.version, expected: SNAPSHOT_VERSION });
        }
        let mut posts = Vec::with_capacity(header.posts);
        for line in lines {
            let line = line.map_err(|e| Error::io("<snapshot>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            posts.push(serde_json::from_str(&line)?);
        }
        if posts.len() != header.posts {
            return Err(Error::Format(format!(
                "header announces {} posts, found {}",
                header.posts,
                posts.len()
            )));
        }
        Self::from_posts(posts)
    }
}

pub const SNAPSHOT_FORMAT: &str = "crush-graph";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    posts: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Interpret numeric labels for this task; inferred per record when unset.
    pub task: Option<TaskKind>,
    pub num_classes: Option<usize>,
    /// Per-user timeline cap. Unlabeled posts beyond the cap are dropped;
    /// labeled posts are always kept.
    pub max_posts_per_user: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub dropped_empty: usize,
    pub dropped_over_cap: usize,
    /// Parents pointing at posts absent from the input; the link is cleared.
    pub dangling_parents: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    author: String,
    thread: String,
    #[serde(default)]
    parent: Option<String>,
    text: String,
    #[serde(default)]
    label: Option<RawLabel>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Tagged(Label),
    Int(u64),
    Real(f64),
}

fn convert_label(raw: RawLabel, opts: &IngestOptions) -> std::result::Result<Label, String> {
    let label = match (raw, opts.task) {
        (RawLabel::Tagged(l), _) => l,
        (RawLabel::Int(i), Some(TaskKind::Regression)) => Label::Score(i as f64),
        (RawLabel::Int(i), _) => Label::Class(i as usize),
        (RawLabel::Real(r), Some(TaskKind::Classification)) => {
            return Err(format!("class label must be an integer, got {r}"))
        }
        (RawLabel::Real(r), _) => Label::Score(r),
    };
    match label {
        Label::Class(c) => {
            if opts.task == Some(TaskKind::Regression) {
                return Err("class label in a regression task".into());
            }
            if let Some(k) = opts.num_classes {
                if c >= k {
                    return Err(format!("class {c} out of range for {k} classes"));
                }
            }
        }
        Label::Score(s) => {
            if opts.task == Some(TaskKind::Classification) {
                return Err("score label in a classification task".into());
            }
            if !(-1.0..=1.0).contains(&s) {
                return Err(format!("score {s} outside [-1, 1]"));
            }
        }
    }
    Ok(label)
}

/// Builds a graph from JSON-lines post records.
///
/// Malformed records are rejected with their 1-based line number and
/// ingestion continues; records whose normalized text is empty are dropped
/// and counted. A duplicate post id aborts with an error naming the id.
pub fn ingest_posts<R: BufRead>(
    reader: R,
    preprocessor: &Preprocessor,
    opts: &IngestOptions,
) -> Result<(SocialGraph, IngestReport)> {
    let mut report = IngestReport::default();
    let mut posts: Vec<(usize, Post)> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |report: &mut IngestReport, reason: String| {
            report.rejected.push(Rejection { line: line_no, reason });
        };
        let raw: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                reject(&mut report, e.to_string());
                continue;
            }
        };
        if raw.id.is_empty() || raw.author.is_empty() || raw.thread.is_empty() {
            reject(&mut report, "empty identifier".into());
            continue;
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicatePost(raw.id));
        }
        let label = match raw.label.map(|l| convert_label(l, opts)).transpose() {
            Ok(l) => l,
            Err(reason) => {
                reject(&mut report, reason);
                continue;
            }
        };
        let text = preprocessor.normalize(&raw.text);
        if text.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        posts.push((
            line_no,
            Post {
                id: PostId(raw.id),
                author: UserId(raw.author),
                thread: ThreadId(raw.thread),
                parent: raw.parent.filter(|p| !p.is_empty()).map(PostId),
                text,
                label,
            },
        ));
    }

    // Parent links must stay inside the thread.
    let thread_of: HashMap<PostId, ThreadId> =
        posts.iter().map(|(_, p)| (p.id.clone(), p.thread.clone())).collect();
    let mut kept = Vec::with_capacity(posts.len());
    for (line_no, mut post) in posts {
        if let Some(parent) = &post.parent {
            match thread_of.get(parent) {
                None => {
                    report.dangling_parents += 1;
                    post.parent = None;
                }
                Some(t) if *t != post.thread => {
                    report.rejected.push(Rejection {
                        line: line_no,
                        reason: format!("parent `{parent}` is in thread `{t}`, not `{}`", post.thread),
                    });
                    continue;
                }
                Some(_) => {}
            }
        }
        kept.push(post);
    }

    if let Some(cap) = opts.max_posts_per_user {
        let mut per_user: HashMap<UserId, usize> = HashMap::new();
        kept.retain(|p| {
            let n = per_user.entry(p.author.clone()).or_default();
            if p.label.is_some() || *n < cap {
                *n += 1;
                true
            } else {
                report.dropped_over_cap += 1;
                false
            }
        });
    }

    report.accepted = kept.len();
    let graph = SocialGraph::from_posts(kept)?;
    Ok((graph, report))
}

//! Text normalization and the hashing tokenizer used by the toy encoder.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmojiHandling {
    #[default]
    Keep,
    Strip,
    /// Replace each emoji run with an `<emoji>` token.
    Token,
}

/// Normalization applied to every post before it enters a graph and to every
/// text handed to inference: lowercase, URLs to `<url>`, mentions to `<user>`,
/// whitespace collapsed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessor {
    #[serde(default)]
    pub emoji: EmojiHandling,
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

fn emoji_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[\x{1F000}-\x{1FAFF}\x{2600}-\x{27BF}\x{FE0F}\x{200D}]+").unwrap()
    })
}

impl Preprocessor {
    pub fn new(emoji: EmojiHandling) -> Self {
        Self { emoji }
    }

    pub fn normalize(&self, text: &str) -> String {
        let lowered = text.to_lowercase();
        let s = url_re().replace_all(&lowered, " <url> ");
        let s = mention_re().replace_all(&s, " <user> ");
        let s = match self.emoji {
            EmojiHandling::Keep => s,
            EmojiHandling::Strip => emoji_re().replace_all(&s, " ").into_owned().into(),
            EmojiHandling::Token => emoji_re().replace_all(&s, " <emoji> ").into_owned().into(),
        };
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

pub const NULL_TOKEN: usize = 0;
pub const MASK_TOKEN: usize = 1;
pub const NUM_SPECIAL_TOKENS: usize = 2;

/// Whitespace tokenizer that maps words into a fixed number of buckets with
/// 64-bit FNV-1a. Ids below [`NUM_SPECIAL_TOKENS`] are reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl HashTokenizer {
    pub fn new(vocab_size: usize, max_seq_len: usize) -> Self {
        assert!(vocab_size > NUM_SPECIAL_TOKENS, "vocabulary too small");
        assert!(max_seq_len > 0);
        Self { vocab_size, max_seq_len }
    }

    pub fn token_id(&self, word: &str) -> usize {
        let buckets = (self.vocab_size - NUM_SPECIAL_TOKENS) as u64;
        NUM_SPECIAL_TOKENS + (fnv1a(word.as_bytes()) % buckets) as usize
    }

    /// Never returns an empty sequence: text without words becomes `[NULL]`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = text
            .split_whitespace()
            .take(self.max_seq_len)
            .map(|w| self.token_id(w))
            .collect();
        if ids.is_empty() {
            ids.push(NULL_TOKEN);
        }
        ids
    }

    /// Stable identifier of the token mapping, part of checkpoint fingerprints.
    pub fn vocab_hash(&self) -> String {
        format!("fnv1a64:{:016x}", fnv1a(format!("hash-ws/{}/{}", self.vocab_size, NUM_SPECIAL_TOKENS).as_bytes()))
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

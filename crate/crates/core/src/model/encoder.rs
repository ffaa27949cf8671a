use serde::{Deserialize, Serialize};

use super::params::{uniform, xavier, ParamSet};
use crate::autodiff::{Graph, Matrix, Var};
use crate::rng::SeededRng;
use crate::text::HashTokenizer;

/// Text encoder whose forward pass is recorded on an autodiff [`Graph`].
///
/// `hidden_states` returns one row per token; `pool` turns those into the
/// sentence embedding used by every training phase. A pretrained model can be
/// adapted by implementing this trait over its own parameter set.
pub trait Encoder {
    fn dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<usize>;
    /// Identifies the token mapping; part of checkpoint fingerprints.
    fn vocab_hash(&self) -> String;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn hidden_states(&self, g: &mut Graph, vars: &[Var], tokens: &[usize]) -> Var;
    /// Input embedding table (`vocab x dim`), shared with the MLM decoder.
    fn token_embedding(&self, vars: &[Var]) -> Var;

    fn pool(&self, g: &mut Graph, hidden: Var) -> Var {
        g.mean_rows(hidden)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl EncoderConfig {
    pub fn new(dim: usize, layers: usize, heads: usize, vocab_size: usize, max_seq_len: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "heads must divide dim");
        Self { dim, layers, heads, ffn_dim: 4 * dim, vocab_size, max_seq_len }
    }
}

const TOK: usize = 0;
const POS: usize = 1;
const PER_LAYER: usize = 13;
// offsets inside a layer block
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const BO: usize = 6;
const LN2_G: usize = 7;
const LN2_B: usize = 8;
const W1: usize = 9;
const B1: usize = 10;
const W2: usize = 11;
const B2: usize = 12;

/// Pre-norm transformer encoder with learned positions, a hashing tokenizer
/// and mean pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub config: EncoderConfig,
    pub tokenizer: HashTokenizer,
    pub params: ParamSet,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig, rng: &SeededRng) -> Self {
        let mut rng = rng.child("encoder").rng();
        let d = config.dim;
        let mut p = ParamSet::default();
        p.push("tok_emb", uniform(config.vocab_size, d, 3f64.sqrt(), &mut rng));
        p.push("pos_emb", uniform(config.max_seq_len, d, 0.1, &mut rng));
        for l in 0..config.layers {
            p.push(format!("l{l}.ln1_g"), Matrix::filled(1, d, 1.0));
            p.push(format!("l{l}.ln1_b"), Matrix::zeros(1, d));
            p.push(format!("l{l}.wq"), xavier(d, d, &mut rng));
            p.push(format!("l{l}.wk"), xavier(d, d, &mut rng));
            p.push(format!("l{l}.wv"), xavier(d, d, &mut rng));
            p.push(format!("l{l}.wo"), xavier(d, d, &mut rng));
            p.push(format!("l{l}.bo"), Matrix::zeros(1, d));
            p.push(format!("l{l}.ln2_g"), Matrix::filled(1, d, 1.0));
            p.push(format!("l{l}.ln2_b"), Matrix::zeros(1, d));
            p.push(format!("l{l}.w1"), xavier(d, config.ffn_dim, &mut rng));
            p.push(format!("l{l}.b1"), Matrix::zeros(1, config.ffn_dim));
            p.push(format!("l{l}.w2"), xavier(config.ffn_dim, d, &mut rng));
            p.push(format!("l{l}.b2"), Matrix::zeros(1, d));
        }
        p.push("lnf_g", Matrix::filled(1, d, 1.0));
        p.push("lnf_b", Matrix::zeros(1, d));
        Self {
            config,
            tokenizer: HashTokenizer::new(config.vocab_size, config.max_seq_len),
            params: p,
        }
    }

    fn layer_base(l: usize) -> usize {
        2 + l * PER_LAYER
    }

    fn norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
        let n = g.layer_norm(x);
        let s = g.mul_row(n, gain);
        g.add_row(s, bias)
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn tokenize(&self, text: &str) -> Vec<usize> {
        self.tokenizer.tokenize(text)
    }

    fn vocab_hash(&self) -> String {
        self.tokenizer.vocab_hash()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn token_embedding(&self, vars: &[Var]) -> Var {
        vars[TOK]
    }

    fn hidden_states(&self, g: &mut Graph, vars: &[Var], tokens: &[usize]) -> Var {
        let n = tokens.len().min(self.config.max_seq_len);
        let tokens = &tokens[..n];
        let positions: Vec<usize> = (0..n).collect();
        let tok = g.gather(vars[TOK], tokens);
        let pos = g.gather(vars[POS], &positions);
        let mut x = g.add(tok, pos);

        let d = self.config.dim;
        let dh = d / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..self.config.layers {
            let b = Self::layer_base(l);
            let h = Self::norm(g, x, vars[b + LN1_G], vars[b + LN1_B]);
            let q = g.matmul(h, vars[b + WQ]);
            let k = g.matmul(h, vars[b + WK]);
            let v = g.matmul(h, vars[b + WV]);
            let mut heads = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let (s, e) = (head * dh, (head + 1) * dh);
                let qh = g.slice_cols(q, s, e);
                let kh = g.slice_cols(k, s, e);
                let vh = g.slice_cols(v, s, e);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let attn = g.softmax_rows(scores);
                heads.push(g.matmul(attn, vh));
            }
            let cat = g.concat_cols(&heads);
            let o = g.affine(cat, vars[b + WO], vars[b + BO]);
            x = g.add(x, o);

            let h = Self::norm(g, x, vars[b + LN2_G], vars[b + LN2_B]);
            let f = g.affine(h, vars[b + W1], vars[b + B1]);
            let f = g.gelu(f);
            let f = g.affine(f, vars[b + W2], vars[b + B2]);
            x = g.add(x, f);
        }
        let f = Self::layer_base(self.config.layers);
        Self::norm(g, x, vars[f], vars[f + 1])
    }
}

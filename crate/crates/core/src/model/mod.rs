//! Encoder abstraction, task heads, MLM machinery and checkpoints.

mod encoder;
mod head;
pub mod mlm;
mod params;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use encoder::{Encoder, EncoderConfig, ToyEncoder};
pub use head::Head;
pub use params::ParamSet;

use crate::autodiff::{Graph, Matrix, Var};
use crate::config::{TaskKind, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Sentence embedding produced by an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Softmax with max-subtraction.
pub fn class_probs(logits: &Logits) -> Vec<f64> {
    let mut p = logits.0.clone();
    crate::autodiff::softmax_in_place(&mut p);
    p
}

/// Most likely class; ties go to the lowest index.
pub fn predict_class(logits: &Logits) -> usize {
    let mut best = 0;
    for (i, &v) in logits.0.iter().enumerate().skip(1) {
        if v > logits.0[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Class(usize),
    Score(f64),
}

/// Identity of a model's shape and tokenization, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dim: usize,
    pub outputs: usize,
    pub task: TaskKind,
    pub vocab_hash: String,
    pub seed: u64,
}

impl Fingerprint {
    /// Structural compatibility: everything except the initialization seed.
    pub fn check_compatible(&self, expected: &Fingerprint) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim != expected.dim {
            problems.push(format!("dim {} != {}", self.dim, expected.dim));
        }
        if self.outputs != expected.outputs {
            problems.push(format!("outputs {} != {}", self.outputs, expected.outputs));
        }
        if self.task != expected.task {
            problems.push(format!("task {:?} != {:?}", self.task, expected.task));
        }
        if self.vocab_hash != expected.vocab_hash {
            problems.push(format!("vocab {} != {}", self.vocab_hash, expected.vocab_hash));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Fingerprint(problems.join(", ")))
        }
    }
}

/// Encoder, MLM output bias and task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<E = ToyEncoder> {
    pub encoder: E,
    /// Output bias of the MLM decoder; the decoder weight is tied to the
    /// encoder's token embedding.
    pub mlm_bias: ParamSet,
    pub head: Head,
    pub fingerprint: Fingerprint,
}

/// Tape variables for every parameter of a model.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<Var>,
    pub mlm_bias: Vec<Var>,
    pub head: Vec<Var>,
}

impl Model<ToyEncoder> {
    /// Fresh toy model for `config`, initialized from `config.seed`.
    pub fn new(config: &TrainConfig) -> Self {
        let rng = SeededRng::new(config.seed, "init");
        let enc_cfg = EncoderConfig::new(config.dim, config.layers, config.heads, config.vocab_size, config.max_seq_len);
        let encoder = ToyEncoder::new(enc_cfg, &rng);
        let head = Head::new(config.task, config.dim, config.head_hidden(), config.head_outputs(), &rng);
        Self::from_parts(encoder, head, config.seed)
    }

    pub fn expected_fingerprint(config: &TrainConfig) -> Fingerprint {
        Fingerprint {
            dim: config.dim,
            outputs: config.head_outputs(),
            task: config.task,
            vocab_hash: crate::text::HashTokenizer::new(config.vocab_size, config.max_seq_len.max(1)).vocab_hash(),
            seed: config.seed,
        }
    }
}

impl<E: Encoder> Model<E> {
    pub fn from_parts(encoder: E, head: Head, seed: u64) -> Self {
        assert_eq!(encoder.dim(), head.input_dim(), "head input must match encoder dim");
        let mut mlm_bias = ParamSet::default();
        mlm_bias.push("mlm_bias", Matrix::zeros(1, encoder.vocab_size()));
        let fingerprint = Fingerprint {
            dim: encoder.dim(),
            outputs: head.outputs(),
            task: head.task,
            vocab_hash: encoder.vocab_hash(),
            seed,
        };
        Self { encoder, mlm_bias, head, fingerprint }
    }

    pub fn task(&self) -> TaskKind {
        self.head.task
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            encoder: self.encoder.params().bind(g),
            mlm_bias: self.mlm_bias.bind(g),
            head: self.head.params.bind(g),
        }
    }

    /// Pooled `1 x dim` embedding node for `text`.
    pub fn embed_on(&self, g: &mut Graph, vars: &BoundModel, text: &str) -> Var {
        let tokens = self.encoder.tokenize(text);
        let hidden = self.encoder.hidden_states(g, &vars.encoder, &tokens);
        self.encoder.pool(g, hidden)
    }

    /// Head output node (`1 x K`, or `1 x 1` for regression) for an embedding node.
    pub fn head_on(&self, g: &mut Graph, vars: &BoundModel, embedding: Var) -> Var {
        self.head.forward(g, &vars.head, embedding)
    }

    /// MLM logits (`seq_len x vocab`) for already-corrupted token ids.
    pub fn mlm_logits_on(&self, g: &mut Graph, vars: &BoundModel, tokens: &[usize]) -> Var {
        let hidden = self.encoder.hidden_states(g, &vars.encoder, tokens);
        let table = self.encoder.token_embedding(&vars.encoder);
        let logits = g.matmul_t(hidden, table);
        g.add_row(logits, vars.mlm_bias[0])
    }

    pub fn encode(&self, text: &str) -> Embedding {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let e = self.embed_on(&mut g, &vars, text);
        Embedding(g.value(e).data.clone())
    }

    fn head_value(&self, e: &Embedding) -> Result<Vec<f64>> {
        if e.dim() != self.head.input_dim() {
            return Err(Error::Dimension { expected: self.head.input_dim(), found: e.dim() });
        }
        let mut g = Graph::new();
        let vars = self.head.params.bind(&mut g);
        let x = g.leaf(Matrix::row_vector(e.0.clone()));
        let out = self.head.forward(&mut g, &vars, x);
        Ok(g.value(out).data.clone())
    }

    pub fn classify(&self, e: &Embedding) -> Result<Logits> {
        if self.head.task != TaskKind::Classification {
            return Err(Error::InvalidArgument("model has a regression head".into()));
        }
        self.head_value(e).map(Logits)
    }

    pub fn regress(&self, e: &Embedding) -> Result<f64> {
        if self.head.task != TaskKind::Regression {
            return Err(Error::InvalidArgument("model has a classification head".into()));
        }
        Ok(self.head_value(e)?[0])
    }

    /// Context-free prediction for one text.
    pub fn predict(&self, text: &str) -> Prediction {
        let e = self.encode(text);
        match self.head.task {
            TaskKind::Classification => Prediction::Class(predict_class(&self.classify(&e).expect("classification head"))),
            TaskKind::Regression => Prediction::Score(self.regress(&e).expect("regression head")),
        }
    }

    pub fn groups(&self) -> [(&'static str, &ParamSet); 3] {
        [("encoder", self.encoder.params()), ("mlm", &self.mlm_bias), ("head", &self.head.params)]
    }
}

pub const CHECKPOINT_FORMAT: &str = "crush-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile<M> {
    format: String,
    version: u32,
    model: M,
}

/// Writes all parameters and the fingerprint as JSON. `f64` values survive
/// the round trip bit for bit.
pub fn save_checkpoint<E: Encoder + Serialize>(model: &Model<E>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let wrapped = CheckpointFile { format: CHECKPOINT_FORMAT.to_owned(), version: CHECKPOINT_VERSION, model };
    serde_json::to_writer(&mut out, &wrapped)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<E: Encoder + DeserializeOwned>(path: impl AsRef<Path>) -> Result<Model<E>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ck: CheckpointFile<Model<E>> = serde_json::from_reader(BufReader::new(file))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("not a checkpoint: `{}`", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: ck.version, expected: CHECKPOINT_VERSION });
    }
    let m = ck.model;
    let actual = Fingerprint {
        dim: m.encoder.dim(),
        outputs: m.head.outputs(),
        task: m.head.task,
        vocab_hash: m.encoder.vocab_hash(),
        seed: m.fingerprint.seed,
    };
    actual
        .check_compatible(&m.fingerprint)
        .map_err(|e| Error::Format(format!("checkpoint contents disagree with its fingerprint: {e}")))?;
    Ok(m)
}

/// Loads a checkpoint and rejects it unless it is structurally compatible with `expected`.
pub fn load_checkpoint_expecting<E: Encoder + DeserializeOwned>(
    path: impl AsRef<Path>,
    expected: &Fingerprint,
) -> Result<Model<E>> {
    let m: Model<E> = load_checkpoint(path)?;
    m.fingerprint.check_compatible(expected)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiff {
    pub group: String,
    pub tensor: String,
    pub index: usize,
    pub before: f64,
    pub after: f64,
}

/// Every scalar whose bit pattern differs between two same-shaped models.
pub fn diff_params<E: Encoder>(a: &Model<E>, b: &Model<E>) -> Result<Vec<ParamDiff>> {
    let mut out = Vec::new();
    for ((group, pa), (_, pb)) in a.groups().into_iter().zip(b.groups()) {
        if !pa.same_shapes(pb) {
            return Err(Error::InvalidArgument(format!("parameter group `{group}` differs in shape")));
        }
        for ((name, ta), tb) in pa.names.iter().zip(&pa.tensors).zip(&pb.tensors) {
            for (index, (x, y)) in ta.data.iter().zip(&tb.data).enumerate() {
                if x.to_bits() != y.to_bits() {
                    out.push(ParamDiff {
                        group: group.to_owned(),
                        tensor: name.clone(),
                        index,
                        before: *x,
                        after: *y,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn toy(dim: usize) -> Model {
        Model::new(&TrainConfig { dim, vocab_size: 64, max_seq_len: 16, num_classes: 3, ..TrainConfig::desk() })
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let m = toy(16);
        let a = m.encode("the quick brown fox");
        assert_eq!(a, m.encode("the quick brown fox"));
        assert_eq!(a.dim(), 16);
        assert_ne!(a, m.encode("the quick brown dog"));
        assert!(a.0.iter().all(|x| x.is_finite()));
        assert_eq!(m.encode("").dim(), 16);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let m = toy(8);
        let zero = |r, c| Matrix::zeros(r, c);
        let mut m = m;
        m.head = Head::from_weights(TaskKind::Classification, zero(8, 8), zero(1, 8), zero(8, 3), zero(1, 3));
        let e = m.encode("anything");
        assert_eq!(m.classify(&e).unwrap().0, vec![0.0; 3]);
        m.head = Head::from_weights(TaskKind::Regression, zero(8, 8), zero(1, 8), zero(8, 1), zero(1, 1));
        assert_eq!(m.regress(&e).unwrap(), 0.0);
    }

    #[test]
    fn head_shapes_and_dimension_errors() {
        let m = toy(8);
        let e = m.encode("x y");
        assert_eq!(m.classify(&e).unwrap().0.len(), 3);
        assert!(matches!(m.classify(&Embedding(vec![0.0; 5])), Err(Error::Dimension { expected: 8, found: 5 })));
        assert!(m.regress(&e).is_err());
    }

    #[test]
    fn head_matches_hand_arithmetic() {
        // 2-d input, 2 hidden units, 2 outputs
        let w1 = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]);
        let b1 = Matrix::row_vector(vec![0.0, -3.0]);
        let w2 = Matrix::from_vec(2, 2, vec![2.0, 0.0, 1.0, -1.0]);
        let b2 = Matrix::row_vector(vec![0.1, 0.2]);
        let head = Head::from_weights(TaskKind::Classification, w1, b1, w2, b2);
        let mut g = Graph::new();
        let vars = head.params.bind(&mut g);
        let x = g.leaf(Matrix::row_vector(vec![2.0, 1.0]));
        let out = head.forward(&mut g, &vars, x);
        // hidden = relu([2*1 + 1*0.5, 2*-1 + 1*2 - 3]) = relu([2.5, -3]) = [2.5, 0]
        // out = [2.5*2 + 0.1, 2.5*0 + 0.2] = [5.1, 0.2]
        assert_abs_diff_eq!(g.value(out).data[0], 5.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(out).data[1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn class_probs_reference_values() {
        let p = class_probs(&Logits(vec![0.0, 0.0, 0.0]));
        p.iter().for_each(|&x| assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15));
        let p = class_probs(&Logits(vec![1.0, 0.0]));
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.2689, epsilon = 1e-4);
        let p = class_probs(&Logits(vec![800.0; 4]));
        p.iter().for_each(|&x| assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15));
    }

    #[test]
    fn predict_class_ties_go_low() {
        assert_eq!(predict_class(&Logits(vec![0.0, 1.0, 0.0])), 1);
        assert_eq!(predict_class(&Logits(vec![2.0, 2.0])), 0);
    }

    proptest! {
        #[test]
        fn probs_sum_to_one(v in proptest::collection::vec(-100.0f64..100.0, 1..10)) {
            let p = class_probs(&Logits(v));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn argmax_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..10), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = predict_class(&Logits(v));
            let b = predict_class(&Logits(shifted.clone()));
            // shifting can merge near-ties through rounding; only compare when the winner is clear
            let probs = class_probs(&Logits(shifted));
            let top = probs[a];
            let runner = probs.iter().enumerate().filter(|&(i, _)| i != a).map(|(_, &p)| p).fold(0.0, f64::max);
            prop_assume!(top - runner > 1e-9);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy(8);
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let back: Model = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert!(diff_params(&m, &back).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_with_wrong_dim_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&toy(8), &path).unwrap();
        let expected = toy(16).fingerprint;
        assert!(matches!(load_checkpoint_expecting::<ToyEncoder>(&path, &expected), Err(Error::Fingerprint(_))));
        let ok = toy(8).fingerprint;
        assert!(load_checkpoint_expecting::<ToyEncoder>(&path, &ok).is_ok());
    }

    #[test]
    fn perturbing_one_weight_reports_one_difference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = toy(8);
        save_checkpoint(&m, &path).unwrap();
        let mut perturbed: Model = load_checkpoint(&path).unwrap();
        perturbed.encoder.params.tensors[3].data[5] += 1e-3;
        let diffs = diff_params(&m, &perturbed).unwrap();
        assert_eq!(diffs.len(), 1);
        assert_eq!(diffs[0].group, "encoder");
        assert_eq!(diffs[0].tensor, m.encoder.params.names[3]);
        assert_eq!(diffs[0].index, 5);
    }
}

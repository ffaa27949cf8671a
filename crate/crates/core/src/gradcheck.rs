//! Finite-difference checks of the training objectives against the tape.
//!
//! Each [`Objective`] builds a small random model and inputs, runs the same
//! loss composition the trainers use, and compares the back-propagated
//! gradient with central differences on a sample of parameter coordinates.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Graph, Matrix};
use crate::config::{TaskKind, TrainConfig};
use crate::error::Result;
use crate::losses::MixWeight;
use crate::model::mlm::{mlm_loss_grad, mlm_mask, MaskedBatch};
use crate::model::{Encoder, Model, ParamSet};
use crate::pipeline::{contrastive_objective, supervised_objective, Target};
use crate::rng::stream;

pub const EPSILON: f64 = 1e-5;
/// Coordinates with a nonzero analytic gradient checked per instance.
pub const ACTIVE_COORDS: usize = 30;
/// Extra coordinates drawn uniformly, including ones the loss ignores.
pub const RANDOM_COORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    UaContrastive,
    AuxContrastive,
    RobustUa,
    CrossEntropy,
    ContextualCe,
    ContextualClassification,
    Mse,
    ContextualMse,
    ContextualRegression,
    Mlm,
}

impl Objective {
    pub const ALL: [Objective; 10] = [
        Objective::UaContrastive,
        Objective::AuxContrastive,
        Objective::RobustUa,
        Objective::CrossEntropy,
        Objective::ContextualCe,
        Objective::ContextualClassification,
        Objective::Mse,
        Objective::ContextualMse,
        Objective::ContextualRegression,
        Objective::Mlm,
    ];

    fn task(self) -> TaskKind {
        match self {
            Objective::Mse | Objective::ContextualMse | Objective::ContextualRegression => TaskKind::Regression,
            _ => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the
    /// checked coordinates; 0 when both vanish.
    pub rel_error: f64,
    pub coords: usize,
    pub loss: f64,
}

/// Small model used by the checks: `dim`-wide, 2 heads, 64-token vocabulary.
pub fn check_config(task: TaskKind, dim: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        task,
        dim,
        heads: 2,
        layers: 2,
        vocab_size: 64,
        max_seq_len: 16,
        num_classes: 3,
        seed,
        ..TrainConfig::desk()
    }
}

struct Inputs {
    anchor: String,
    candidates: Vec<String>,
    aux: Vec<String>,
    context: Vec<String>,
    class: usize,
    score: f64,
    lambda: f64,
    mask: Option<MaskedBatch>,
}

fn sentence<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(2..7);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..40))).collect::<Vec<_>>().join(" ")
}

fn texts(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn loss_of<E: Encoder>(model: &Model<E>, objective: Objective, inputs: &Inputs) -> Result<(f64, Vec<Vec<Matrix>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let lambda = inputs.lambda;
    let (loss, seeds) = match objective {
        Objective::UaContrastive => {
            let o = contrastive_objective(model, &mut g, &vars, &inputs.anchor, &texts(&inputs.candidates), None, 0.7)?;
            (o.loss, o.seeds)
        }
        Objective::AuxContrastive => {
            let o = contrastive_objective(model, &mut g, &vars, &inputs.anchor, &texts(&inputs.aux), None, 0.7)?;
            (o.loss, o.seeds)
        }
        Objective::RobustUa => {
            let aux = texts(&inputs.aux);
            let o = contrastive_objective(
                model,
                &mut g,
                &vars,
                &inputs.anchor,
                &texts(&inputs.candidates),
                Some((&aux, MixWeight::new(lambda)?)),
                0.7,
            )?;
            (o.loss, o.seeds)
        }
        Objective::Mlm => {
            let batch = inputs.mask.as_ref().expect("mlm inputs carry a mask");
            let logits = model.mlm_logits_on(&mut g, &vars, &batch.inputs);
            let (loss, grad) = mlm_loss_grad(g.value(logits), batch)?;
            (loss, vec![(logits, grad)])
        }
        _ => {
            let target = match objective.task() {
                TaskKind::Classification => Target::Class(inputs.class),
                TaskKind::Regression => Target::Score(inputs.score),
            };
            let (w_task, w_ctx, ctx) = match objective {
                Objective::CrossEntropy | Objective::Mse => (1.0, 0.0, Vec::new()),
                Objective::ContextualCe | Objective::ContextualMse => (0.0, 1.0, texts(&inputs.context)),
                _ => (lambda, 1.0 - lambda, texts(&inputs.context)),
            };
            let o = supervised_objective(model, &mut g, &vars, &inputs.anchor, target, &ctx, w_task, w_ctx)?;
            (o.loss, o.seeds)
        }
    };
    let grads = g.backward(&seeds);
    let per_group = vec![
        model.encoder.params().grads(&grads, &vars.encoder),
        model.mlm_bias.grads(&grads, &vars.mlm_bias),
        model.head.params.grads(&grads, &vars.head),
    ];
    Ok((loss, per_group))
}

fn group_mut<E: Encoder>(model: &mut Model<E>, group: usize) -> &mut ParamSet {
    match group {
        0 => model.encoder.params_mut(),
        1 => &mut model.mlm_bias,
        _ => &mut model.head.params,
    }
}

/// Runs one randomized instance of `objective` on a `dim`-wide model.
pub fn check_objective(objective: Objective, seed: u64, dim: usize) -> Result<GradCheck> {
    let config = check_config(objective.task(), dim, seed);
    let mut model = Model::new(&config);
    let mut rng = stream(seed, "gradcheck");
    let mut inputs = Inputs {
        anchor: sentence(&mut rng),
        candidates: (0..4).map(|_| sentence(&mut rng)).collect(),
        aux: (0..3).map(|_| sentence(&mut rng)).collect(),
        context: (0..rng.gen_range(1..5)).map(|_| sentence(&mut rng)).collect(),
        class: rng.gen_range(0..config.num_classes),
        score: rng.gen_range(-1.0..1.0),
        lambda: rng.gen_range(0.1..0.9),
        mask: None,
    };
    if objective == Objective::Mlm {
        let tokens = model.encoder.tokenize(&inputs.anchor);
        // force at least one masked position
        loop {
            let batch = mlm_mask(&tokens, 0.3, config.vocab_size, &mut rng)?;
            if batch.num_masked() > 0 {
                inputs.mask = Some(batch);
                break;
            }
        }
    }
    let (loss, analytic) = loss_of(&model, objective, &inputs)?;

    let mut active = Vec::new();
    let mut all = Vec::new();
    for (gi, tensors) in analytic.iter().enumerate() {
        for (ti, t) in tensors.iter().enumerate() {
            for (k, &x) in t.data.iter().enumerate() {
                all.push((gi, ti, k));
                if x != 0.0 {
                    active.push((gi, ti, k));
                }
            }
        }
    }
    let mut coords: Vec<(usize, usize, usize)> = active.choose_multiple(&mut rng, ACTIVE_COORDS).copied().collect();
    coords.extend(all.choose_multiple(&mut rng, RANDOM_COORDS).copied());

    let (mut diff, mut a_norm, mut n_norm) = (0.0, 0.0, 0.0);
    for &(gi, ti, k) in &coords {
        let orig = group_mut(&mut model, gi).tensors[ti].data[k];
        group_mut(&mut model, gi).tensors[ti].data[k] = orig + EPSILON;
        let plus = loss_of(&model, objective, &inputs)?.0;
        group_mut(&mut model, gi).tensors[ti].data[k] = orig - EPSILON;
        let minus = loss_of(&model, objective, &inputs)?.0;
        group_mut(&mut model, gi).tensors[ti].data[k] = orig;
        let numeric = (plus - minus) / (2.0 * EPSILON);
        let a = analytic[gi][ti].data[k];
        diff += (a - numeric).powi(2);
        a_norm += a * a;
        n_norm += numeric * numeric;
    }
    let denom = a_norm.sqrt().max(n_norm.sqrt());
    let rel_error = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
    Ok(GradCheck { rel_error, coords: coords.len(), loss })
}

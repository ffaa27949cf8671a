//! Training phases and context-free inference.
//!
//! Every phase walks its examples in a per-epoch shuffled order and draws all
//! randomness for one example from a stream labelled by phase, epoch and
//! example index. A run therefore does not depend on batching or on where it
//! was interrupted, and resuming from a [`PhaseState`] reproduces the
//! uninterrupted run exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Matrix, Var};
use crate::config::{Phase, TaskKind, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{Label, Post, PostId, SocialGraph};
use crate::losses::{self, ContrastiveBatch, MixWeight};
use crate::model::mlm::{mlm_loss_grad, mlm_mask};
use crate::model::{save_checkpoint, BoundModel, Encoder, Model, Prediction};
use crate::optim::Optimizer;
use crate::rng::{stream, SeededRng, StreamRng};
use crate::sampling::{
    is_ua_eligible, proxy_class_labels, sample_context_set, sample_post_set, sample_user_set, ClassIndex,
};

/// Progress of a phase, sufficient to resume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    /// Next epoch to run.
    pub epoch: usize,
    /// Next step inside `epoch`.
    pub step_in_epoch: usize,
    pub optimizer: Optimizer,
    pub loss_curve: Vec<f64>,
    pub skipped_anchors: usize,
    pub empty_context_steps: usize,
    pub val_loss_curve: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub epochs_without_improvement: usize,
    pub stopped_early: bool,
}

impl PhaseState {
    fn new(phase: Phase, config: &TrainConfig) -> Self {
        Self {
            phase,
            epoch: 0,
            step_in_epoch: 0,
            optimizer: Optimizer::from_config(config),
            loss_curve: Vec::new(),
            skipped_anchors: 0,
            empty_context_steps: 0,
            val_loss_curve: Vec::new(),
            best_val_loss: None,
            epochs_without_improvement: 0,
            stopped_early: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    /// Mean loss of each optimizer step.
    pub loss_curve: Vec<f64>,
    /// Anchors that could not form an example (UA: author has a single post;
    /// CP: no position was masked).
    pub skipped_anchors: usize,
    /// Fine-tuning examples whose context set came back empty.
    pub empty_context_steps: usize,
    pub val_loss_curve: Vec<f64>,
    pub stopped_early: bool,
    /// False when the run stopped at `max_steps` before the last epoch.
    pub finished: bool,
    pub wall_time_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
    pub state: PhaseState,
}

impl PhaseReport {
    pub fn steps(&self) -> usize {
        self.loss_curve.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PhaseOptions {
    /// Per-epoch model checkpoints and a resume file go here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps in this call.
    pub max_steps: Option<usize>,
    pub resume: Option<PhaseState>,
}

/// Model plus phase progress, written next to per-epoch checkpoints.
#[derive(Serialize, Deserialize)]
pub struct ResumePoint<E> {
    pub model: Model<E>,
    pub state: PhaseState,
}

pub fn save_resume_point<E: Encoder + Serialize>(path: &Path, model: &Model<E>, state: &PhaseState) -> Result<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, E> {
        model: &'a Model<E>,
        state: &'a PhaseState,
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &Borrowed { model, state })?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_resume_point<E: Encoder + DeserializeOwned>(path: &Path) -> Result<ResumePoint<E>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[derive(Debug, Clone, Copy)]
struct Groups {
    encoder: bool,
    mlm: bool,
    head: bool,
}

/// Loss and tape gradients of one example.
struct Example {
    loss: f64,
    grads: Gradients,
    vars: BoundModel,
}

#[derive(Default)]
struct Counters {
    empty_context: usize,
}

struct GradSum {
    encoder: Vec<Matrix>,
    mlm: Vec<Matrix>,
    head: Vec<Matrix>,
}

impl GradSum {
    fn zeros<E: Encoder>(model: &Model<E>) -> Self {
        let z = |p: &crate::model::ParamSet| p.tensors.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect();
        Self { encoder: z(model.encoder.params()), mlm: z(&model.mlm_bias), head: z(&model.head.params) }
    }

    fn add(&mut self, ex: &Example, groups: Groups) {
        let add = |acc: &mut Vec<Matrix>, vars: &[Var]| {
            for (a, &v) in acc.iter_mut().zip(vars) {
                if let Some(g) = ex.grads.get(v) {
                    a.add_assign(g);
                }
            }
        };
        if groups.encoder {
            add(&mut self.encoder, &ex.vars.encoder);
        }
        if groups.mlm {
            add(&mut self.mlm, &ex.vars.mlm_bias);
        }
        if groups.head {
            add(&mut self.head, &ex.vars.head);
        }
    }
}

fn epoch_order(seed: u64, phase: Phase, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &format!("{}/epoch{epoch}/order", phase.name())));
    order
}

fn example_rng(seed: u64, phase: Phase, epoch: usize, item: usize) -> StreamRng {
    SeededRng::new(seed, format!("{}/epoch{epoch}/item{item}", phase.name())).rng()
}

/// Shared epoch/batch/step loop. `example` returns `None` for items that
/// cannot form an example; `validate` runs after each epoch and may stop
/// training early.
#[allow(clippy::too_many_arguments)]
fn train_loop<E, F>(
    config: &TrainConfig,
    phase: Phase,
    model: &mut Model<E>,
    items: usize,
    groups: Groups,
    opts: &PhaseOptions,
    mut validate: Option<&mut dyn FnMut(&Model<E>) -> Result<f64>>,
    mut example: F,
) -> Result<PhaseReport>
where
    E: Encoder + Serialize,
    F: FnMut(&Model<E>, usize, &mut StreamRng, &mut Counters) -> Result<Option<Example>>,
{
    let started = Instant::now();
    let mut state = match &opts.resume {
        Some(s) if s.phase == phase => s.clone(),
        Some(s) => {
            return Err(Error::InvalidArgument(format!(
                "resume state belongs to phase {}, not {}",
                s.phase.name(),
                phase.name()
            )))
        }
        None => PhaseState::new(phase, config),
    };
    let epochs = config.epochs(phase);
    let batch = config.batch_size;
    let steps_per_epoch = items.div_ceil(batch);
    let mut steps_this_call = 0;
    let mut checkpoint_path = None;
    let mut interrupted = false;

    while state.epoch < epochs && !state.stopped_early {
        let order = epoch_order(config.seed, phase, state.epoch, items);
        while state.step_in_epoch < steps_per_epoch {
            if opts.max_steps.is_some_and(|m| steps_this_call >= m) {
                interrupted = true;
                break;
            }
            let chunk = &order[state.step_in_epoch * batch..((state.step_in_epoch + 1) * batch).min(items)];
            let mut sum = GradSum::zeros(model);
            let mut total = 0.0;
            let mut used = 0usize;
            let mut counters = Counters::default();
            for &item in chunk {
                let mut rng = example_rng(config.seed, phase, state.epoch, item);
                if let Some(ex) = example(model, item, &mut rng, &mut counters)? {
                    if !ex.loss.is_finite() {
                        return Err(Error::InvalidArgument(format!("non-finite loss in phase {}", phase.name())));
                    }
                    total += ex.loss;
                    used += 1;
                    sum.add(&ex, groups);
                }
            }
            state.empty_context_steps += counters.empty_context;
            state.step_in_epoch += 1;
            if used == 0 {
                continue;
            }
            let scale = 1.0 / used as f64;
            let mean = |v: Vec<Matrix>| -> Vec<Matrix> { v.into_iter().map(|m| m.scaled(scale)).collect() };
            let opt = &mut state.optimizer;
            if groups.encoder {
                opt.update("encoder", config.lr_encoder, model.encoder.params_mut(), &mean(sum.encoder));
            }
            if groups.mlm {
                opt.update("mlm", config.lr_head, &mut model.mlm_bias, &mean(sum.mlm));
            }
            if groups.head {
                opt.update("head", config.lr_head, &mut model.head.params, &mean(sum.head));
            }
            opt.finish_step();
            state.loss_curve.push(total * scale);
            steps_this_call += 1;
        }
        if interrupted {
            break;
        }
        if let Some(v) = validate.as_deref_mut() {
            let loss = v(model)?;
            state.val_loss_curve.push(loss);
            match state.best_val_loss {
                Some(best) if loss >= best => state.epochs_without_improvement += 1,
                _ => {
                    state.best_val_loss = Some(loss);
                    state.epochs_without_improvement = 0;
                }
            }
            if config.ua_patience.is_some_and(|p| state.epochs_without_improvement >= p) {
                state.stopped_early = true;
            }
        }
        state.epoch += 1;
        state.step_in_epoch = 0;
        if let Some(dir) = &opts.checkpoint_dir {
            let path = dir.join(format!("{}-epoch{}.json", phase.name(), state.epoch));
            save_checkpoint(model, &path)?;
            checkpoint_path = Some(path);
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_resume_point(&dir.join(format!("{}-resume.json", phase.name())), model, &state)?;
    }
    let finished = !interrupted;
    Ok(PhaseReport {
        phase,
        loss_curve: state.loss_curve.clone(),
        skipped_anchors: state.skipped_anchors,
        empty_context_steps: state.empty_context_steps,
        val_loss_curve: state.val_loss_curve.clone(),
        stopped_early: state.stopped_early,
        finished,
        wall_time_secs: started.elapsed().as_secs_f64(),
        checkpoint_path,
        state,
    })
}

/// Continual masked-language-model training over every post of `corpus`.
/// Updates the encoder and the MLM output bias; the task head is untouched.
pub fn run_phase_cp<E: Encoder + Serialize>(
    config: &TrainConfig,
    corpus: &SocialGraph,
    model: &mut Model<E>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    let texts: Vec<&str> = corpus.posts().iter().map(|p| p.text.as_str()).collect();
    run_phase_cp_on_texts(config, &texts, model, opts)
}

pub fn run_phase_cp_on_texts<E: Encoder + Serialize>(
    config: &TrainConfig,
    texts: &[&str],
    model: &mut Model<E>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    config.validate()?;
    if texts.is_empty() {
        return Err(Error::InvalidArgument("continual pre-training needs a non-empty corpus".into()));
    }
    let tokens: Vec<Vec<usize>> = texts.iter().map(|t| model.encoder.tokenize(t)).collect();
    let vocab = model.encoder.vocab_size();
    let mut skipped = 0;
    let groups = Groups { encoder: true, mlm: true, head: false };
    let mut report = train_loop(config, Phase::Cp, model, texts.len(), groups, opts, None, |m, item, rng, _| {
        let batch = mlm_mask(&tokens[item], config.mask_prob, vocab, rng)?;
        if batch.num_masked() == 0 {
            skipped += 1;
            return Ok(None);
        }
        let mut g = Graph::new();
        let vars = m.bind(&mut g);
        let logits = m.mlm_logits_on(&mut g, &vars, &batch.inputs);
        let (loss, grad) = mlm_loss_grad(g.value(logits), &batch)?;
        let grads = g.backward(&[(logits, grad)]);
        Ok(Some(Example { loss, grads, vars }))
    })?;
    report.skipped_anchors += skipped;
    report.state.skipped_anchors = report.skipped_anchors;
    Ok(report)
}

/// Mean MLM loss over `texts` under masks drawn from `seed`, without
/// updating anything. Sequences that draw no masked position are left out.
pub fn mlm_eval_loss<E: Encoder>(model: &Model<E>, texts: &[&str], mask_prob: f64, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for (i, text) in texts.iter().enumerate() {
        let tokens = model.encoder.tokenize(text);
        let mut rng = SeededRng::new(seed, format!("mlm-eval/item{i}")).rng();
        let batch = mlm_mask(&tokens, mask_prob, model.encoder.vocab_size(), &mut rng)?;
        if batch.num_masked() == 0 {
            continue;
        }
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let logits = model.mlm_logits_on(&mut g, &vars, &batch.inputs);
        total += mlm_loss_grad(g.value(logits), &batch)?.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no sequence drew a masked position".into()));
    }
    Ok(total / n as f64)
}

fn class_of(post: &Post, num_classes: usize) -> Result<usize> {
    match post.label {
        Some(Label::Class(c)) if c < num_classes => Ok(c),
        Some(Label::Class(c)) => Err(Error::InvalidArgument(format!("post `{}` has class {c} >= {num_classes}", post.id))),
        _ => Err(Error::MissingLabel(post.id.0.clone())),
    }
}

fn score_of(post: &Post) -> Result<f64> {
    match post.label {
        Some(Label::Score(s)) => Ok(s),
        _ => Err(Error::MissingLabel(post.id.0.clone())),
    }
}

/// Auxiliary class assignment for Robust UA: gold classes, or K-means proxy
/// classes of the training scores for regression.
fn aux_classes(config: &TrainConfig, train_set: &[Post]) -> Result<(usize, HashMap<PostId, usize>)> {
    match config.task {
        TaskKind::Classification => {
            let map = train_set
                .iter()
                .map(|p| Ok((p.id.clone(), class_of(p, config.num_classes)?)))
                .collect::<Result<_>>()?;
            Ok((config.num_classes, map))
        }
        TaskKind::Regression => {
            let scores = train_set.iter().map(score_of).collect::<Result<Vec<f64>>>()?;
            let labels = proxy_class_labels(&scores, config.proxy_clusters, &mut stream(config.seed, "ua/proxy-labels"))?;
            let map = train_set.iter().map(|p| p.id.clone()).zip(labels).collect();
            Ok((config.proxy_clusters, map))
        }
    }
}

fn embed_all<E: Encoder>(m: &Model<E>, g: &mut Graph, vars: &BoundModel, texts: &[&str]) -> Vec<(Var, Vec<f64>)> {
    texts
        .iter()
        .map(|t| {
            let v = m.embed_on(g, vars, t);
            let data = g.value(v).data.clone();
            (v, data)
        })
        .collect()
}

/// A scalar loss on the tape: its value and the upstream gradients to
/// back-propagate.
pub struct Objective {
    pub loss: f64,
    pub seeds: Vec<(Var, Matrix)>,
}

fn scaled_row(g: &[f64], w: f64) -> Matrix {
    Matrix::row_vector(g.iter().map(|x| w * x).collect())
}

/// Contrastive loss of `anchor` against `candidates` (positive first). With
/// `aux`, the auxiliary candidates give a second contrastive term and the
/// two are mixed with the given weight on the first.
pub fn contrastive_objective<E: Encoder>(
    m: &Model<E>,
    g: &mut Graph,
    vars: &BoundModel,
    anchor: &str,
    candidates: &[&str],
    aux: Option<(&[&str], MixWeight)>,
    temperature: f64,
) -> Result<Objective> {
    let za = m.embed_on(g, vars, anchor);
    let za_val = g.value(za).data.clone();
    let cands = embed_all(m, g, vars, candidates);
    let batch = ContrastiveBatch::new(&za_val, cands.iter().map(|(_, d)| d.as_slice()).collect())
        .with_temperature(temperature);
    let (ua, ua_grad) = losses::contrastive_nll_grad(&batch)?;
    let Some((aux_texts, lambda)) = aux else {
        let mut seeds = vec![(za, Matrix::row_vector(ua_grad.anchor))];
        seeds.extend(cands.iter().zip(ua_grad.candidates).map(|((v, _), gr)| (*v, Matrix::row_vector(gr))));
        return Ok(Objective { loss: ua, seeds });
    };
    let aux_cands = embed_all(m, g, vars, aux_texts);
    let batch = ContrastiveBatch::new(&za_val, aux_cands.iter().map(|(_, d)| d.as_slice()).collect())
        .with_temperature(temperature);
    let (aux_loss, aux_grad) = losses::contrastive_nll_grad(&batch)?;
    let (l, r) = (lambda.get(), 1.0 - lambda.get());
    let anchor_grad: Vec<f64> = ua_grad.anchor.iter().zip(&aux_grad.anchor).map(|(a, b)| l * a + r * b).collect();
    let mut seeds = vec![(za, Matrix::row_vector(anchor_grad))];
    seeds.extend(cands.iter().zip(&ua_grad.candidates).map(|((v, _), gr)| (*v, scaled_row(gr, l))));
    seeds.extend(aux_cands.iter().zip(&aux_grad.candidates).map(|((v, _), gr)| (*v, scaled_row(gr, r))));
    Ok(Objective { loss: losses::robust_ua_loss(ua, aux_loss, lambda), seeds })
}

/// Supervision target of an anchor post.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Score(f64),
}

/// `w_task` times the anchor's task loss plus `w_context` times the loss of
/// the context posts' predictions against the anchor's target.
#[allow(clippy::too_many_arguments)]
pub fn supervised_objective<E: Encoder>(
    m: &Model<E>,
    g: &mut Graph,
    vars: &BoundModel,
    anchor: &str,
    target: Target,
    context: &[&str],
    w_task: f64,
    w_context: f64,
) -> Result<Objective> {
    let z = m.embed_on(g, vars, anchor);
    let out = m.head_on(g, vars, z);
    let anchor_out = g.value(out).data.clone();
    let mut ctx: Vec<(Var, Vec<f64>)> = Vec::with_capacity(context.len());
    for text in context {
        let z = m.embed_on(g, vars, text);
        let o = m.head_on(g, vars, z);
        ctx.push((o, g.value(o).data.clone()));
    }
    let mut seeds = Vec::with_capacity(ctx.len() + 1);
    let loss = match target {
        Target::Class(y) => {
            let (ce, g_ce) = losses::cross_entropy_grad(&anchor_out, y)?;
            seeds.push((out, scaled_row(&g_ce, w_task)));
            let ctx_logits: Vec<Vec<f64>> = ctx.iter().map(|(_, d)| d.clone()).collect();
            let (cce, g_ctx) = losses::contextual_ce_grad(&ctx_logits, y)?;
            seeds.extend(ctx.iter().zip(g_ctx).map(|((v, _), gr)| (*v, scaled_row(&gr, w_context))));
            w_task * ce + w_context * cce
        }
        Target::Score(y) => {
            let r = anchor_out[0];
            seeds.push((out, Matrix::row_vector(vec![w_task * losses::mse_grad(y, r)])));
            let preds: Vec<f64> = ctx.iter().map(|(_, d)| d[0]).collect();
            let (cmse, g_ctx) = losses::contextual_mse_grad(y, &preds);
            seeds.extend(ctx.iter().zip(g_ctx).map(|((v, _), gr)| (*v, Matrix::row_vector(vec![w_context * gr]))));
            w_task * losses::mse(y, r) + w_context * cmse
        }
    };
    Ok(Objective { loss, seeds })
}

/// User-anchored contrastive loss for one anchor, plus the auxiliary term
/// when `aux` is given. Only the loss is returned when `backward` is false.
#[allow(clippy::too_many_arguments)]
fn ua_example<E: Encoder>(
    config: &TrainConfig,
    m: &Model<E>,
    graph: &SocialGraph,
    anchor: &Post,
    aux: Option<(&ClassIndex<'_>, usize, &HashMap<&PostId, &Post>)>,
    rng: &mut StreamRng,
    backward: bool,
) -> Result<(f64, Option<Example>)> {
    let users = sample_user_set(graph, anchor, config.k_negatives, rng)?;
    let posts = sample_post_set(graph, anchor, &users, rng)?;
    let texts: Vec<&str> = posts.posts.iter().map(|id| graph.post(id).expect("sampled from graph").text.as_str()).collect();
    let aux_texts = match aux {
        Some((index, class, by_id)) => {
            let set = index.sample(&anchor.id, class, rng)?;
            Some(set.posts.iter().map(|id| by_id[id].text.as_str()).collect::<Vec<&str>>())
        }
        None => None,
    };
    let lambda = MixWeight::new(config.ua_lambda)?;
    let mut g = Graph::new();
    let vars = m.bind(&mut g);
    let aux = aux_texts.as_deref().map(|t| (t, lambda));
    let obj = contrastive_objective(m, &mut g, &vars, &anchor.text, &texts, aux, config.temperature)?;
    if !backward {
        return Ok((obj.loss, None));
    }
    let grads = g.backward(&obj.seeds);
    Ok((obj.loss, Some(Example { loss: obj.loss, grads, vars })))
}

/// User-anchored contrastive self-supervision. Only encoder parameters change.
///
/// Anchors are all posts of `graph`, or with `robust_ua` the labeled posts of
/// `train_set`, which also feed the auxiliary class-contrastive term. Anchors
/// whose author wrote a single post are skipped and counted.
pub fn run_phase_ua<E: Encoder + Serialize>(
    config: &TrainConfig,
    graph: &SocialGraph,
    model: &mut Model<E>,
    train_set: Option<&[Post]>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    config.validate()?;
    if config.k_negatives >= graph.user_count() {
        return Err(Error::Sampling(format!(
            "k = {} negatives needs more than {} users",
            config.k_negatives,
            graph.user_count()
        )));
    }
    let candidates: Vec<&Post> = if config.robust_ua {
        let train = train_set.ok_or_else(|| Error::InvalidArgument("robust UA needs a labeled training set".into()))?;
        train
            .iter()
            .map(|p| graph.post(&p.id).ok_or_else(|| Error::UnknownPost(p.id.0.clone())))
            .collect::<Result<_>>()?
    } else {
        graph.posts().iter().collect()
    };
    let (mut anchors, skipped): (Vec<&Post>, Vec<&Post>) = candidates.into_iter().partition(|p| is_ua_eligible(graph, p));
    let skipped = skipped.len();

    let aux_data = match (config.robust_ua, train_set) {
        (true, Some(train)) => Some((train, aux_classes(config, train)?)),
        _ => None,
    };
    let class_index = match &aux_data {
        Some((train, (k, map))) => Some(ClassIndex::from_labeled(train.iter(), *k, |p| map.get(&p.id).copied())?),
        None => None,
    };
    let by_id: HashMap<&PostId, &Post> = train_set.unwrap_or(&[]).iter().map(|p| (&p.id, p)).collect();
    let aux_for = |p: &Post| -> Option<(&ClassIndex<'_>, usize, &HashMap<&PostId, &Post>)> {
        let (_, (_, map)) = aux_data.as_ref()?;
        Some((class_index.as_ref()?, map[&p.id], &by_id))
    };

    let mut val: Vec<&Post> = Vec::new();
    if config.ua_patience.is_some() && anchors.len() >= 2 {
        anchors.shuffle(&mut stream(config.seed, "ua/validation-split"));
        let n_val = ((anchors.len() as f64 * config.ua_val_fraction).ceil() as usize).clamp(1, anchors.len() - 1);
        val = anchors.split_off(anchors.len() - n_val);
        anchors.sort_by_key(|p| graph.index_of(&p.id));
    }
    let mut validate = |m: &Model<E>| -> Result<f64> {
        let mut total = 0.0;
        for (i, p) in val.iter().enumerate() {
            let mut rng = SeededRng::new(config.seed, format!("ua/validation/item{i}")).rng();
            total += ua_example(config, m, graph, p, aux_for(p), &mut rng, false)?.0;
        }
        Ok(total / val.len() as f64)
    };
    let validate: Option<&mut dyn FnMut(&Model<E>) -> Result<f64>> =
        if val.is_empty() { None } else { Some(&mut validate) };

    let groups = Groups { encoder: true, mlm: false, head: false };
    let mut report = train_loop(config, Phase::Ua, model, anchors.len(), groups, opts, validate, |m, item, rng, _| {
        let anchor = anchors[item];
        let (_, ex) = ua_example(config, m, graph, anchor, aux_for(anchor), rng, true)?;
        Ok(ex)
    })?;
    report.skipped_anchors = skipped;
    report.state.skipped_anchors = skipped;
    Ok(report)
}

/// Resolves the training posts in `graph` and checks their labels.
fn resolve_train<'g>(config: &TrainConfig, graph: Option<&'g SocialGraph>, train_set: &'g [Post]) -> Result<Vec<&'g Post>> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    train_set
        .iter()
        .map(|p| {
            match config.task {
                TaskKind::Classification => {
                    class_of(p, config.num_classes)?;
                }
                TaskKind::Regression => {
                    score_of(p)?;
                }
            }
            match graph {
                Some(g) => g.post(&p.id).map(|_| p).ok_or_else(|| Error::UnknownPost(p.id.0.clone())),
                None => Ok(p),
            }
        })
        .collect()
}

fn supervised<E: Encoder + Serialize>(
    config: &TrainConfig,
    phase: Phase,
    graph: Option<&SocialGraph>,
    train_set: &[Post],
    model: &mut Model<E>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    config.validate()?;
    if model.task() != config.task {
        return Err(Error::InvalidArgument("model head does not match the configured task".into()));
    }
    let anchors = resolve_train(config, graph, train_set)?;
    let lambda = MixWeight::new(config.cr_lambda)?;
    let groups = Groups { encoder: true, mlm: false, head: true };
    train_loop(config, phase, model, anchors.len(), groups, opts, None, |m, item, rng, counters| {
        let anchor = anchors[item];
        let target = match config.task {
            TaskKind::Classification => Target::Class(class_of(anchor, config.num_classes)?),
            TaskKind::Regression => Target::Score(score_of(anchor)?),
        };
        let mut context: Vec<&str> = Vec::new();
        if let Some(graph) = graph {
            let ctx = sample_context_set(graph, anchor, config.n_thread_context, config.n_user_context, rng)?;
            context.extend(ctx.iter().map(|id| graph.post(id).expect("sampled from graph").text.as_str()));
            if context.is_empty() {
                counters.empty_context += 1;
            }
        }
        // plain fine-tuning uses the task loss alone; with contextual
        // regularization an empty context leaves lambda times the task loss
        let (w_task, w_context) = match graph {
            None => (1.0, 0.0),
            Some(_) => (lambda.get(), 1.0 - lambda.get()),
        };
        let mut g = Graph::new();
        let vars = m.bind(&mut g);
        let obj = supervised_objective(m, &mut g, &vars, &anchor.text, target, &context, w_task, w_context)?;
        let grads = g.backward(&obj.seeds);
        Ok(Some(Example { loss: obj.loss, grads, vars }))
    })
}

/// Fine-tuning with contextual regularization: each labeled anchor's task
/// loss is mixed with the loss of pulling predictions on its thread and
/// timeline neighbours toward the anchor's label. Updates encoder and head.
pub fn run_phase_cr<E: Encoder + Serialize>(
    config: &TrainConfig,
    graph: &SocialGraph,
    train_set: &[Post],
    model: &mut Model<E>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    supervised(config, Phase::Cr, Some(graph), train_set, model, opts)
}

/// Standard cross-entropy or squared-error fine-tuning of encoder and head.
pub fn finetune_plain<E: Encoder + Serialize>(
    config: &TrainConfig,
    train_set: &[Post],
    model: &mut Model<E>,
    opts: &PhaseOptions,
) -> Result<PhaseReport> {
    supervised(config, Phase::Plain, None, train_set, model, opts)
}

/// Context-free prediction: needs only the trained model and the text.
pub fn infer<E: Encoder>(model: &Model<E>, text: &str) -> Prediction {
    model.predict(text)
}

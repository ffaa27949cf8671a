use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crush_core::eval::{context_bucket_f1, evaluate, fewshot_curve, predict_classes, write_curve_csv, Buckets};
use crush_core::graph::{ingest_posts, IngestOptions, Post};
use crush_core::model::{class_probs, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Logits};
use crush_core::pipeline::{
    finetune_plain, infer, load_resume_point, run_phase_cp, run_phase_cr, run_phase_ua, PhaseOptions, PhaseReport,
};
use crush_core::synthetic::{echo_chamber, separable_users, EchoChamberSpec};
use crush_core::text::Preprocessor;
use crush_core::{Model, Phase, SocialGraph, TaskKind, TrainConfig};
use log::{info, warn};
use serde::Serialize;

use crate::manifest::{Artifact, Manifest, FILE_NAME};
use crate::{settings, Cli, Command, FinetuneMode, SynthKind};

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Infer { model, text } = &cli.command {
        return cmd_infer(model, text);
    }
    let config = settings::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Ingest { input, out_dir } => cmd_ingest(&config, &input, &out_dir),
        Command::PretrainCp { graph, init, resume, out_dir } => {
            let g = load_graph(&graph)?;
            let mut m = Manifest::new("pretrain-cp", &config);
            m.dataset("graph", &graph)?;
            train_phase(&config, Phase::Cp, Start { init, resume }, &out_dir, m, |model, opts| {
                Ok(run_phase_cp(&config, &g, model, opts)?)
            })
        }
        Command::PretrainUa { graph, init, resume, train, out_dir } => {
            let g = load_graph(&graph)?;
            let mut m = Manifest::new("pretrain-ua", &config);
            m.dataset("graph", &graph)?;
            let train_set = match &train {
                Some(p) => {
                    m.dataset("train", p)?;
                    Some(load_posts(p, &config)?)
                }
                None if config.robust_ua => bail!("robust UA needs --train"),
                None => None,
            };
            train_phase(&config, Phase::Ua, Start { init, resume }, &out_dir, m, |model, opts| {
                Ok(run_phase_ua(&config, &g, model, train_set.as_deref(), opts)?)
            })
        }
        Command::Finetune { mode, graph, train, init, resume, out_dir } => {
            let train_set = load_posts(&train, &config)?;
            let mut m = Manifest::new("finetune", &config);
            m.dataset("train", &train)?;
            let phase = match mode {
                FinetuneMode::Cr => Phase::Cr,
                FinetuneMode::Plain => Phase::Plain,
            };
            let g = match (&graph, mode) {
                (Some(p), FinetuneMode::Cr) => {
                    m.dataset("graph", p)?;
                    Some(load_graph(p)?)
                }
                (None, FinetuneMode::Cr) => bail!("contextual regularization needs --graph"),
                (_, FinetuneMode::Plain) => None,
            };
            train_phase(&config, phase, Start { init, resume }, &out_dir, m, |model, opts| {
                Ok(match &g {
                    Some(g) => run_phase_cr(&config, g, &train_set, model, opts)?,
                    None => finetune_plain(&config, &train_set, model, opts)?,
                })
            })
        }
        Command::Evaluate { model, test, graph, out } => cmd_evaluate(&config, &model, &test, graph.as_deref(), &out),
        Command::Fewshot { mode, graph, train, test, init, fractions, seeds, out_dir } => {
            cmd_fewshot(&config, mode, graph.as_deref(), &train, &test, init.as_deref(), &fractions, &seeds, &out_dir)
        }
        Command::Synth { kind, out_dir } => cmd_synth(&config, kind, &out_dir),
        Command::Infer { .. } => unreachable!("handled above"),
    }
}

fn ingest_options(config: &TrainConfig) -> IngestOptions {
    IngestOptions {
        task: Some(config.task),
        num_classes: (config.task == TaskKind::Classification).then_some(config.num_classes),
        max_posts_per_user: config.max_posts_per_user,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_graph(path: &Path) -> Result<SocialGraph> {
    SocialGraph::load(path).with_context(|| format!("loading graph {}", path.display()))
}

/// Labeled post records; any malformed record is an error.
fn load_posts(path: &Path, config: &TrainConfig) -> Result<Vec<Post>> {
    let (graph, report) = ingest_posts(open(path)?, &Preprocessor::default(), &IngestOptions {
        max_posts_per_user: None,
        ..ingest_options(config)
    })?;
    if let Some(r) = report.rejected.first() {
        bail!("{}: line {}: {} ({} records rejected)", path.display(), r.line, r.reason, report.rejected.len());
    }
    Ok(graph.posts().to_vec())
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_line(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_ingest(config: &TrainConfig, input: &Path, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let (graph, report) = ingest_posts(open(input)?, &Preprocessor::default(), &ingest_options(config))?;
    for r in report.rejected.iter().take(10) {
        warn!("line {}: {}", r.line, r.reason);
    }
    info!(
        "{} posts, {} users, {} threads; {} rejected, {} empty, {} over the per-user cap, {} dangling parents",
        graph.len(),
        graph.user_count(),
        graph.threads().len(),
        report.rejected.len(),
        report.dropped_empty,
        report.dropped_over_cap,
        report.dangling_parents
    );
    let graph_path = out_dir.join("graph.json");
    graph.save(&graph_path)?;
    let report_path = out_dir.join("ingest-report.json");
    write_json(&report_path, &report)?;
    let mut m = Manifest::new("ingest", config);
    m.dataset("input", input)?;
    m.outputs = vec![Artifact::of(&graph_path)?, Artifact::of(&report_path)?];
    m.write(out_dir)?;
    Ok(())
}

struct Start {
    init: Option<PathBuf>,
    resume: Option<PathBuf>,
}

/// Phase report without wall-clock time, so reruns write identical files.
#[derive(Serialize)]
struct PhaseSummary<'a> {
    phase: Phase,
    steps: usize,
    finished: bool,
    stopped_early: bool,
    skipped_anchors: usize,
    empty_context_steps: usize,
    loss_curve: &'a [f64],
    val_loss_curve: &'a [f64],
}

fn train_phase<F>(config: &TrainConfig, phase: Phase, start: Start, out_dir: &Path, mut manifest: Manifest, train: F) -> Result<()>
where
    F: FnOnce(&mut Model, &PhaseOptions) -> Result<PhaseReport>,
{
    let expected = Model::expected_fingerprint(config);
    let (mut model, resume) = match (&start.init, &start.resume) {
        (Some(p), _) => {
            manifest.predecessor = Some(Artifact::of(p)?);
            (load_checkpoint_expecting(p, &expected).with_context(|| format!("loading {}", p.display()))?, None)
        }
        (None, Some(p)) => {
            manifest.predecessor = Some(Artifact::of(p)?);
            let point = load_resume_point(p).with_context(|| format!("loading {}", p.display()))?;
            point.model.fingerprint.check_compatible(&expected)?;
            (point.model, Some(point.state))
        }
        (None, None) => (Model::new(config), None),
    };
    create_dir(out_dir)?;
    let checkpoint_dir = out_dir.join("checkpoints");
    create_dir(&checkpoint_dir)?;
    let opts = PhaseOptions { checkpoint_dir: Some(checkpoint_dir), max_steps: None, resume };
    let report = train(&mut model, &opts)?;
    info!(
        "phase {}: {} steps in {:.1}s, last loss {:.4}, {} skipped anchors, {} empty-context examples",
        phase.name(),
        report.steps(),
        report.wall_time_secs,
        report.loss_curve.last().copied().unwrap_or(f64::NAN),
        report.skipped_anchors,
        report.empty_context_steps
    );
    let model_path = out_dir.join("model.json");
    save_checkpoint(&model, &model_path)?;
    let report_path = out_dir.join("report.json");
    write_json(
        &report_path,
        &PhaseSummary {
            phase,
            steps: report.steps(),
            finished: report.finished,
            stopped_early: report.stopped_early,
            skipped_anchors: report.skipped_anchors,
            empty_context_steps: report.empty_context_steps,
            loss_curve: &report.loss_curve,
            val_loss_curve: &report.val_loss_curve,
        },
    )?;
    manifest.checkpoint = Some(Artifact::of(&model_path)?);
    manifest.outputs = vec![Artifact::of(&report_path)?];
    manifest.write(out_dir)?;
    Ok(())
}

fn cmd_evaluate(config: &TrainConfig, model_path: &Path, test: &Path, graph: Option<&Path>, out: &Path) -> Result<()> {
    let model: Model = load_checkpoint(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let k = model.fingerprint.outputs;
    let eval_config = TrainConfig { task: model.task(), num_classes: k.max(2), ..config.clone() };
    let posts = load_posts(test, &eval_config)?;
    let mut report = evaluate(&model, &posts, k)?;
    let mut manifest = Manifest::new("evaluate", config);
    manifest.dataset("test", test)?;
    manifest.predecessor = Some(Artifact::of(model_path)?);
    if let Some(gp) = graph {
        anyhow::ensure!(model.task() == TaskKind::Classification, "context breakdown needs a classification model");
        let g = load_graph(gp)?;
        manifest.dataset("graph", gp)?;
        let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
        let preds = predict_classes(&model, &texts)?;
        let golds: Vec<usize> = posts.iter().map(|p| p.label.and_then(|l| l.class()).expect("checked by evaluate")).collect();
        let ids: Vec<_> = posts.iter().map(|p| p.id.clone()).collect();
        report.context_buckets =
            Some(context_bucket_f1(&preds, &golds, &g, &ids, &Buckets::user_default(), &Buckets::thread_default(), k)?);
    }
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(out, format!("{text}\n")).with_context(|| format!("writing {}", out.display()))?;
    print_line(&text)?;
    manifest.outputs = vec![Artifact::of(out)?];
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(FILE_NAME);
    write_json(&out.with_file_name(name), &manifest)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fewshot(
    config: &TrainConfig,
    mode: FinetuneMode,
    graph: Option<&Path>,
    train: &Path,
    test: &Path,
    init: Option<&Path>,
    fractions: &[f64],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = Manifest::new("fewshot", config);
    manifest.dataset("train", train)?;
    manifest.dataset("test", test)?;
    let train_set = load_posts(train, config)?;
    let test_set = load_posts(test, config)?;
    let g = match (graph, mode) {
        (Some(p), FinetuneMode::Cr) => {
            manifest.dataset("graph", p)?;
            Some(load_graph(p)?)
        }
        (None, FinetuneMode::Cr) => bail!("contextual regularization needs --graph"),
        (_, FinetuneMode::Plain) => None,
    };
    let base = match init {
        Some(p) => {
            manifest.predecessor = Some(Artifact::of(p)?);
            load_checkpoint_expecting(p, &Model::expected_fingerprint(config))?
        }
        None => Model::new(config),
    };
    let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds.to_vec() };
    let k = config.head_outputs();
    let points = fewshot_curve(fractions, &seeds, &train_set, |subset, fraction, seed| {
        let run_config = TrainConfig { seed, ..config.clone() };
        let mut model = base.clone();
        let opts = PhaseOptions::default();
        match &g {
            Some(g) => run_phase_cr(&run_config, g, subset, &mut model, &opts)?,
            None => finetune_plain(&run_config, subset, &mut model, &opts)?,
        };
        let r = evaluate(&model, &test_set, k)?;
        let metric = r.macro_f1.or(r.mse).expect("report carries its task metric");
        info!("fraction {fraction} seed {seed}: {metric:.4} on {} training posts", subset.len());
        Ok(metric)
    })?;
    create_dir(out_dir)?;
    let csv_path = out_dir.join("curve.csv");
    let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_curve_csv(&points, file)?;
    manifest.outputs = vec![Artifact::of(&csv_path)?];
    manifest.write(out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct ClassLine {
    class: usize,
    probs: Vec<f64>,
}

#[derive(Serialize)]
struct ScoreLine {
    score: f64,
}

fn cmd_infer(model_path: &Path, text: &str) -> Result<()> {
    let model: Model = load_checkpoint(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let text = Preprocessor::default().normalize(text);
    let line = match infer(&model, &text) {
        crush_core::model::Prediction::Class(class) => {
            let logits: Logits = model.classify(&model.encode(&text))?;
            serde_json::to_string(&ClassLine { class, probs: class_probs(&logits) })?
        }
        crush_core::model::Prediction::Score(score) => serde_json::to_string(&ScoreLine { score })?,
    };
    print_line(&line)
}

fn write_jsonl<'a>(path: &Path, posts: impl IntoIterator<Item = &'a Post>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for p in posts {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(config: &TrainConfig, kind: SynthKind, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let mut manifest = Manifest::new("synth", config);
    let mut written = Vec::new();
    match kind {
        SynthKind::EchoChamber => {
            anyhow::ensure!(config.task == TaskKind::Classification, "the echo-chamber corpus is a classification task");
            let spec = EchoChamberSpec { num_classes: config.num_classes, ..Default::default() };
            let e = echo_chamber(&spec, config.seed);
            // graph posts carry no labels; splits carry observed (train) and gold (test) labels
            let unlabeled: Vec<Post> = e.graph.posts().iter().map(|p| Post { label: None, ..p.clone() }).collect();
            let test: Vec<Post> = e
                .test
                .iter()
                .zip(&e.gold)
                .map(|(p, &g)| p.clone().with_label(crush_core::Label::Class(g)))
                .collect();
            for (name, posts) in [("posts.jsonl", &unlabeled), ("train.jsonl", &e.train), ("test.jsonl", &test)] {
                let path = out_dir.join(name);
                write_jsonl(&path, posts)?;
                written.push(path);
            }
        }
        SynthKind::SeparableUsers => {
            let g = separable_users(10, 20, 30, config.seed);
            let path = out_dir.join("posts.jsonl");
            write_jsonl(&path, g.posts())?;
            written.push(path);
        }
    }
    manifest.outputs = written.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?;
    manifest.write(out_dir)?;
    Ok(())
}

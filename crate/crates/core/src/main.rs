use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use actseq::datagen::{generate, normalize_per_sample, GeneratorConfig, STROKE_LIKE};
use actseq::harness::{count_report, run_plan, split_by_group, write_run, ExperimentPlan, BOUNDARY_COLUMNS, COUNT_COLUMNS};
use actseq::io::{self, read_dataset, read_predictions, write_dataset, write_json, write_predictions, write_text, Dataset};
use actseq::metrics::{boundary_accuracy_by_duration, default_duration_edges, evaluate, DurationBucketReport};
use actseq::numerics::Checkpoint;
use actseq::segmenter::{train_segmenter, Segmenter, SegmenterConfig, SEGMENTER_KIND};
use actseq::seq2seq::{train_seq2seq, windowed_infer, EncoderKind, InputKind, Seq2Seq, Seq2SeqConfig, SEQ2SEQ_KIND};
use actseq::sequence::{boundaries_of, collapse_labels, ActionSequence, LabeledSample};
use actseq::training::TrainConfig;
use actseq::{Error, Result};

/// Relative output paths are placed under this directory when it is set.
const OUTPUT_DIR_ENV: &str = "ACTSEQ_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "actseq", version, about = "Action-sequence identification toolkit")]
struct Cli {
    /// Seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON settings for the command; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train a segmenter, raw2seq or seg2seq model.
    Train(TrainArgs),
    /// Predict action sequences for a dataset split (JSONL).
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Per-group per-class count comparison.
    Count(CountArgs),
    /// Collapse a frame-label CSV into its action sequence.
    Collapse(CollapseArgs),
    /// Boundary detection accuracy by action duration for a segmenter.
    BoundaryReport(BoundaryArgs),
    /// Run an experiment plan into a run directory.
    RunPlan(RunPlanArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator profile (stroke-like, mixed-duration).
    #[arg(long)]
    profile: Option<String>,
    /// Number of sequences.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// segmenter, raw2seq or seg2seq.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Segmenter checkpoint feeding seg2seq.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for checkpoint.json, log.json and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Segmenter checkpoint feeding a seg2seq checkpoint.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Segmenter post-processing: none, smoothing or boundary.
    #[arg(long)]
    refine: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Output directory for metrics.json, metrics.csv and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollapseArgs {
    /// Frame-label CSV, one label per row.
    labels: PathBuf,
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Frames within which a predicted boundary counts.
    #[arg(long)]
    tolerance: Option<usize>,
    /// Comma-separated ascending bucket edges in seconds.
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
    #[arg(long)]
    refine: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunPlanArgs {
    /// Plan file; `--config` is accepted as well.
    plan: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_path(given: Option<PathBuf>, default: &str) -> PathBuf {
    let p = given.unwrap_or_else(|| PathBuf::from(default));
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p,
    }
}

fn load_settings<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => serde_json::from_str(&io::read_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

fn required(v: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::Config(format!("missing {what}")))
}

fn normalized(samples: Vec<LabeledSample>, on: bool) -> Result<Vec<LabeledSample>> {
    if !on {
        return Ok(samples);
    }
    samples
        .into_iter()
        .map(|s| LabeledSample::new(s.id.clone(), normalize_per_sample(&s.features)?, s.frame_labels.clone()))
        .collect()
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&io::read_text(path)?)
}

fn checkpoint_kind(ck: &Checkpoint) -> &str {
    ck.config.get("kind").and_then(|k| k.as_str()).unwrap_or("")
}

fn check_dims(ds: &Dataset, input_dim: usize, classes: usize) -> Result<()> {
    if ds.meta.feature_dim != input_dim || ds.meta.classes.len() != classes {
        return Err(Error::Shape(format!(
            "model expects {input_dim} channels and {classes} classes, dataset has {} and {}",
            ds.meta.feature_dim,
            ds.meta.classes.len()
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthSettings {
    profile: String,
    n: usize,
    seed: u64,
    /// Full generator configuration; replaces the profile. Its seed is
    /// replaced by the resolved seed.
    generator: Option<GeneratorConfig>,
    /// Train/val/test fractions over sequence groups.
    split: [f64; 3],
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            profile: STROKE_LIKE.into(),
            n: 60,
            seed: 0,
            generator: None,
            split: [0.6, 0.2, 0.2],
        }
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut s: SynthSettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.profile {
        s.profile = v.clone();
        s.generator = None;
    }
    if let Some(v) = a.n {
        s.n = v;
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    let mut cfg = match s.generator.take() {
        Some(g) => g,
        None => GeneratorConfig::profile(&s.profile, s.seed)?,
    };
    cfg.seed = s.seed;
    let samples = generate(&cfg, s.n)?;
    let groups: BTreeMap<String, String> = samples
        .iter()
        .map(|x| (x.id.clone(), x.features.metadata.get("group").cloned().unwrap_or_else(|| x.id.clone())))
        .collect();
    let splits = split_by_group(&groups, s.split, s.seed)?;
    s.generator = Some(cfg.clone());
    let out = output_path(a.out.clone(), "dataset");
    let source = json!({ "command": "synth", "settings": s });
    write_dataset(&out, &cfg.class_names, &samples, splits.clone(), Some(source))?;
    println!(
        "wrote {} sequences to {} (train {}, val {}, test {})",
        samples.len(),
        out.display(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSettings {
    system: String,
    data: Option<PathBuf>,
    train_split: String,
    val_split: String,
    normalize: bool,
    segmenter: SegmenterConfig,
    seq2seq: Seq2SeqConfig,
    train: TrainConfig,
    /// Segmenter checkpoint whose probabilities feed seg2seq.
    segmenter_checkpoint: Option<PathBuf>,
    seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            system: "segmenter".into(),
            data: None,
            train_split: "train".into(),
            val_split: "val".into(),
            normalize: true,
            segmenter: SegmenterConfig::default(),
            seq2seq: Seq2SeqConfig {
                encoder: EncoderKind::Conv,
                ..Seq2SeqConfig::default()
            },
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            segmenter_checkpoint: None,
            seed: 0,
        }
    }
}

fn probs_samples(seg: &Segmenter, samples: &[LabeledSample], with_boundary: bool) -> Result<Vec<LabeledSample>> {
    samples
        .iter()
        .map(|s| {
            let x = seg.predict(&s.features)?.to_features(with_boundary)?;
            LabeledSample::new(s.id.clone(), x, s.frame_labels.clone())
        })
        .collect()
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut s: TrainSettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.system {
        s.system = v.clone();
    }
    if let Some(v) = &a.data {
        s.data = Some(v.clone());
    }
    if let Some(v) = &a.segmenter {
        s.segmenter_checkpoint = Some(v.clone());
    }
    if let Some(v) = a.epochs {
        s.train.epochs = v;
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    let ds = read_dataset(required(s.data.clone(), "--data")?)?;
    let c = ds.meta.classes.len();
    let d = ds.meta.feature_dim;
    let tr = normalized(ds.split_owned(&s.train_split)?, s.normalize)?;
    let va = normalized(ds.split_owned(&s.val_split)?, s.normalize)?;
    let out = output_path(a.out.clone(), "model");
    let (ck, log) = match s.system.as_str() {
        "segmenter" => {
            s.segmenter.input_dim = d;
            s.segmenter.num_classes = c;
            let t = train_segmenter(&tr, &va, s.segmenter.clone(), &s.train, s.seed)?;
            (t.model.to_checkpoint(), t.log)
        }
        "raw2seq" => {
            s.seq2seq.input_kind = InputKind::Raw;
            s.seq2seq.input_dim = d;
            s.seq2seq.num_classes = c;
            let t = train_seq2seq(&tr, &va, s.seq2seq.clone(), &s.train, s.seed)?;
            (t.model.to_checkpoint(), t.log)
        }
        "seg2seq" => {
            let path = required(s.segmenter_checkpoint.clone(), "--segmenter checkpoint for seg2seq")?;
            let seg = Segmenter::from_checkpoint(&read_checkpoint(&path)?)?;
            check_dims(&ds, seg.config.input_dim, seg.config.num_classes)?;
            let with_b = s.seq2seq.include_boundary;
            s.seq2seq.input_kind = InputKind::Probs;
            s.seq2seq.input_dim = c + usize::from(with_b);
            s.seq2seq.num_classes = c;
            let t = train_seq2seq(
                &probs_samples(&seg, &tr, with_b)?,
                &probs_samples(&seg, &va, with_b)?,
                s.seq2seq.clone(),
                &s.train,
                s.seed,
            )?;
            (t.model.to_checkpoint(), t.log)
        }
        other => return Err(Error::Config(format!("unknown system {other:?}"))),
    };
    write_text(out.join("checkpoint.json"), &ck.to_json()?)?;
    write_json(out.join("log.json"), &log)?;
    write_json(out.join("config.json"), &s)?;
    println!(
        "trained {} for {} epochs; best validation AER {} at epoch {}; wrote {}",
        s.system,
        log.epochs.len(),
        log.best_val_aer.map_or("n/a".into(), |v| format!("{v:.4}")),
        log.best_epoch.map_or("n/a".into(), |v| v.to_string()),
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferSettings {
    checkpoint: Option<PathBuf>,
    segmenter_checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    split: String,
    normalize: bool,
    /// none, smoothing or boundary (segmenter checkpoints only).
    refine: String,
    seed: u64,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            segmenter_checkpoint: None,
            data: None,
            split: "test".into(),
            normalize: true,
            refine: "none".into(),
            seed: 0,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

fn infer(cli: &Cli, a: &InferArgs) -> Result<()> {
    let mut s: InferSettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.checkpoint {
        s.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.segmenter {
        s.segmenter_checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.data {
        s.data = Some(v.clone());
    }
    if let Some(v) = &a.split {
        s.split = v.clone();
    }
    if let Some(v) = &a.refine {
        s.refine = v.clone();
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    let ds = read_dataset(required(s.data.clone(), "--data")?)?;
    let samples = normalized(ds.split_owned(&s.split)?, s.normalize)?;
    let ck = read_checkpoint(&required(s.checkpoint.clone(), "--checkpoint")?)?;
    let preds: Vec<(String, ActionSequence)> = match checkpoint_kind(&ck) {
        SEGMENTER_KIND => {
            let seg = Segmenter::from_checkpoint(&ck)?;
            check_dims(&ds, seg.config.input_dim, seg.config.num_classes)?;
            let refine = seg.config.refinement(&s.refine)?;
            samples
                .iter()
                .map(|x| {
                    let labels = refine.apply(&seg.predict(&x.features)?)?;
                    Ok((x.id.clone(), collapse_labels(&labels.labels)))
                })
                .collect::<Result<_>>()?
        }
        SEQ2SEQ_KIND => {
            let model = Seq2Seq::from_checkpoint(&ck)?;
            let c = model.config.num_classes;
            let inputs = match model.config.input_kind {
                InputKind::Raw => {
                    check_dims(&ds, model.config.input_dim, c)?;
                    samples
                }
                InputKind::Probs => {
                    let path = required(s.segmenter_checkpoint.clone(), "--segmenter checkpoint for seg2seq")?;
                    let seg = Segmenter::from_checkpoint(&read_checkpoint(&path)?)?;
                    check_dims(&ds, seg.config.input_dim, c)?;
                    probs_samples(&seg, &samples, model.config.include_boundary)?
                }
            };
            inputs
                .iter()
                .map(|x| Ok((x.id.clone(), windowed_infer(&model, &x.features)?)))
                .collect::<Result<_>>()?
        }
        other => return Err(Error::Format(format!("unknown checkpoint kind {other:?}"))),
    };
    let out = output_path(a.out.clone(), "predictions.jsonl");
    write_predictions(&out, &preds)?;
    write_json(sidecar(&out), &s)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

/// Pairs each prediction with its ground truth, in prediction order.
fn paired(ds: &Dataset, preds: &[(String, ActionSequence)]) -> Result<Vec<(String, ActionSequence, ActionSequence)>> {
    let c = ds.meta.classes.len();
    preds
        .iter()
        .map(|(id, p)| {
            let s = ds
                .samples
                .get(id)
                .ok_or_else(|| Error::Format(format!("prediction for unknown sample {id}")))?;
            if let Some(&bad) = p.items().iter().find(|&&k| k >= c) {
                return Err(Error::Format(format!("prediction {id} has class {bad} outside 0..{c}")));
            }
            Ok((id.clone(), s.sequence().clone(), p.clone()))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSettings {
    predictions: Option<PathBuf>,
    data: Option<PathBuf>,
    bootstrap_replicates: usize,
    seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            predictions: None,
            data: None,
            bootstrap_replicates: 1000,
            seed: 0,
        }
    }
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let mut s: EvalSettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.predictions {
        s.predictions = Some(v.clone());
    }
    if let Some(v) = &a.data {
        s.data = Some(v.clone());
    }
    if let Some(v) = a.bootstrap {
        s.bootstrap_replicates = v;
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    let (data, predictions) = (required(s.data.clone(), "--data")?, required(s.predictions.clone(), "--predictions")?);
    let ds = read_dataset(data)?;
    let preds = read_predictions(predictions)?;
    let pairs: Vec<(ActionSequence, ActionSequence)> =
        paired(&ds, &preds)?.into_iter().map(|(_, g, p)| (g, p)).collect();
    if pairs.is_empty() {
        return Err(Error::Format("no predictions to evaluate".into()));
    }
    let report = evaluate(&pairs, None, ds.meta.classes.len(), s.bootstrap_replicates, s.seed)?;
    let out = output_path(a.out.clone(), "eval");
    write_json(out.join("metrics.json"), &report)?;
    write_text(out.join("metrics.csv"), &report.to_csv()?)?;
    write_json(out.join("config.json"), &s)?;
    let show = |v: Option<actseq::metrics::MetricValue>| v.map_or("n/a".into(), |m| format!("{:.4}", m.value));
    println!(
        "{} sequences: ES {} AER {} TPR {} FDR {} F1 {}; wrote {}",
        report.n_samples,
        show(report.edit_score),
        show(report.aer),
        show(report.tpr),
        show(report.fdr),
        show(report.f1),
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CountSettings {
    predictions: Option<PathBuf>,
    data: Option<PathBuf>,
    seed: u64,
}

fn count(cli: &Cli, a: &CountArgs) -> Result<()> {
    let mut s: CountSettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.predictions {
        s.predictions = Some(v.clone());
    }
    if let Some(v) = &a.data {
        s.data = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    let (data, predictions) = (required(s.data.clone(), "--data")?, required(s.predictions.clone(), "--predictions")?);
    let ds = read_dataset(data)?;
    let preds = read_predictions(predictions)?;
    let rows = paired(&ds, &preds)?;
    let groups: Vec<String> = rows.iter().map(|(id, _, _)| ds.group_of(id)).collect();
    let gt: Vec<ActionSequence> = rows.iter().map(|r| r.1.clone()).collect();
    let pr: Vec<ActionSequence> = rows.iter().map(|r| r.2.clone()).collect();
    let report = count_report(&gt, &pr, &groups, &ds.meta.classes)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COUNT_COLUMNS)?;
    for r in report.csv_records() {
        w.write_record(r)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let out = output_path(a.out.clone(), "counts.csv");
    write_text(&out, &text)?;
    write_json(sidecar(&out), &s)?;
    println!("{} groups x {} classes; wrote {}", report.rows.len() / ds.meta.classes.len().max(1), ds.meta.classes.len(), out.display());
    Ok(())
}

fn collapse_cmd(a: &CollapseArgs) -> Result<()> {
    let tokens = io::read_label_tokens(&a.labels)?;
    let mut out: Vec<&String> = Vec::new();
    for t in &tokens {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BoundarySettings {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    split: String,
    normalize: bool,
    tolerance: usize,
    edges: Vec<f64>,
    refine: String,
    seed: u64,
}

impl Default for BoundarySettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: "test".into(),
            normalize: true,
            tolerance: 10,
            edges: default_duration_edges(),
            refine: "none".into(),
            seed: 0,
        }
    }
}

fn boundary_report(cli: &Cli, a: &BoundaryArgs) -> Result<()> {
    let mut s: BoundarySettings = load_settings(cli.config.as_deref())?;
    if let Some(v) = &a.checkpoint {
        s.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.data {
        s.data = Some(v.clone());
    }
    if let Some(v) = &a.split {
        s.split = v.clone();
    }
    if let Some(v) = a.tolerance {
        s.tolerance = v;
    }
    if let Some(v) = &a.edges {
        s.edges = v.clone();
    }
    if let Some(v) = &a.refine {
        s.refine = v.clone();
    }
    if let Some(v) = cli.seed {
        s.seed = v;
    }
    if s.edges.windows(2).any(|w| !(w[0] < w[1])) || s.edges.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("edges must be positive and ascending".into()));
    }
    let ds = read_dataset(required(s.data.clone(), "--data")?)?;
    let ck = read_checkpoint(&required(s.checkpoint.clone(), "--checkpoint")?)?;
    let seg = Segmenter::from_checkpoint(&ck)?;
    check_dims(&ds, seg.config.input_dim, seg.config.num_classes)?;
    let refine = seg.config.refinement(&s.refine)?;
    let mut report = DurationBucketReport::empty(&s.edges);
    for x in normalized(ds.split_owned(&s.split)?, s.normalize)? {
        let labels = refine.apply(&seg.predict(&x.features)?)?;
        report.merge(&boundary_accuracy_by_duration(&x.frame_labels, &boundaries_of(&labels), &s.edges, s.tolerance));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BOUNDARY_COLUMNS)?;
    for b in &report.buckets {
        w.write_record([
            refine.system_name().to_string(),
            b.lower.to_string(),
            b.upper.map(|u| u.to_string()).unwrap_or_default(),
            b.count.to_string(),
            b.detected.to_string(),
            b.accuracy().map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let out = output_path(a.out.clone(), "boundary_report.csv");
    write_text(&out, &text)?;
    write_json(sidecar(&out), &s)?;
    for b in &report.buckets {
        let upper = b.upper.map_or("inf".into(), |u| u.to_string());
        let acc = b.accuracy().map_or("n/a".into(), |v| format!("{v:.3}"));
        println!("[{}, {}) s: {} of {} starts detected ({})", b.lower, upper, b.detected, b.count, acc);
    }
    Ok(())
}

fn run_plan_cmd(cli: &Cli, a: &RunPlanArgs) -> Result<()> {
    let path = match (&a.plan, &cli.config) {
        (Some(_), Some(_)) => return Err(Error::Config("give the plan either positionally or with --config".into())),
        (Some(p), None) | (None, Some(p)) => Some(p.as_path()),
        (None, None) => None,
    };
    let mut plan: ExperimentPlan = load_settings(path)?;
    if let Some(v) = cli.seed {
        plan.seed = v;
    }
    let out = output_path(a.out.clone(), "run");
    let result = run_plan(&plan)?;
    write_run(&out, &result)?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "system", "ES", "AER", "FDR", "F1");
    for s in &result.systems {
        let v = |m: Option<actseq::metrics::MetricValue>| m.map_or("n/a".into(), |m| format!("{:.4}", m.value));
        println!(
            "{:<10} {:>8} {:>8} {:>8} {:>8}",
            s.system.name(),
            v(s.report.edit_score),
            v(s.report.aer),
            v(s.report.fdr),
            v(s.report.f1)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Infer(a) => infer(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Count(a) => count(cli, a),
        Command::Collapse(a) => collapse_cmd(a),
        Command::BoundaryReport(a) => boundary_report(cli, a),
        Command::RunPlan(a) => run_plan_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("config: {line}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

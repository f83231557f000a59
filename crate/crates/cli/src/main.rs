//! `satl`: generate synthetic data, train, evaluate and inspect models.
//!
//! Reports go to stdout as JSON. Failures print one line to stderr,
//! `error kind=<kind> msg=<message>`, and exit with status 1. Usage errors
//! exit with status 2. Set `SATL_LOG` (e.g. `info`, `debug`) for progress logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use satl_core::checkpoint::Checkpoint;
use satl_core::eval::{compat_eval, fitb_eval, Aggregate, FitbOptions};
use satl_core::losses::{difficulty_scores, objective_gradcheck, DsMode, DEFAULT_MARGIN, DEFAULT_WEIGHT_DECAY};
use satl_core::model::{DEFAULT_EMBED_DIM, DEFAULT_MASK_NOISE};
use satl_core::numcore::{softplus, DEFAULT_STEP};
use satl_core::syngen::{self, GenConfig};
use satl_core::trainer::{epoch_triplets, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR};
use satl_core::{
    Dataset, EncoderKind, Error, LossConfig, Margin, Model, ModelConfig, OptimizerKind, TrainConfig, Trainer, Triplet,
};

#[derive(Parser)]
#[command(name = "satl", version, about = "Type-pair masked outfit compatibility with a self-adaptive triplet loss")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with hard distractors.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Fill-in-the-blank accuracy of a checkpoint.
    EvalFitb(EvalArgs),
    /// Outfit compatibility AUC of a checkpoint.
    EvalCompat(EvalArgs),
    /// Compare analytic and finite-difference gradients of the objective.
    Gradcheck(GradcheckArgs),
    /// Dump mask norms and the most heavily weighted triplets.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for manifest.json, data files and diagnostics.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    types: usize,
    #[arg(long, default_value_t = 200)]
    items_per_type: usize,
    #[arg(long, default_value_t = 8)]
    styles: usize,
    #[arg(long, default_value_t = 4)]
    style_dim: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Fraction of items made into hard near-duplicates.
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0.15)]
    signal_scale: f64,
    #[arg(long, default_value_t = 3.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Identity,
    Affine,
}

#[derive(Clone, Copy, ValueEnum)]
enum DsModeArg {
    Step,
    Epoch,
}

#[derive(Args)]
struct ModelArgs {
    /// Feature encoder. `identity` uses stored features directly.
    #[arg(long, value_enum, default_value = "identity")]
    encoder: EncoderArg,
    /// Embedding size [default: feature dim for identity, 128 for affine].
    #[arg(long)]
    dim: Option<usize>,
    /// Hidden width of the affine encoder.
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_MASK_NOISE)]
    mask_noise: f64,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        let encoder = match self.encoder {
            EncoderArg::Identity => EncoderKind::Identity,
            EncoderArg::Affine => EncoderKind::Affine { hidden: self.hidden },
        };
        ModelConfig { dim: self.dim, encoder, mask_noise: self.mask_noise, seed }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    /// `off` fixes the triplet weight to 1 (plain triplet loss).
    #[arg(long, value_enum, default_value = "on")]
    satl: Switch,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negatives drawn per (anchor, positive) pair.
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, value_enum, default_value = "sgd")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 5e-5)]
    lambda_sim: f64,
    #[arg(long, default_value_t = 5e-4)]
    lambda_l1: f64,
    #[arg(long, default_value_t = 5e-4)]
    lambda_l2: f64,
    /// Pull of the weight parameters back toward their initial value.
    #[arg(long, default_value_t = DEFAULT_WEIGHT_DECAY)]
    weight_decay: f64,
    /// When difficulty scores are computed.
    #[arg(long, value_enum, default_value = "step")]
    ds_mode: DsModeArg,
    /// Learn per-term log-scales on the loss weights.
    #[arg(long)]
    learned_scales: bool,
    /// Evaluate FITB after every epoch.
    #[arg(long)]
    eval_each_epoch: bool,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write JSON-lines training records here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Step record interval for --log (0 keeps epoch records only).
    #[arg(long, default_value_t = 1)]
    log_every: u64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Include each question's scores in the report.
    #[arg(long)]
    details: bool,
    /// FITB candidate score aggregation.
    #[arg(long, value_enum, default_value = "mean")]
    aggregate: AggregateArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateArg {
    Mean,
    Sum,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Dataset manifest, or `toy` for a small built-in dataset.
    #[arg(long, default_value = "toy")]
    manifest: String,
    /// Check at a trained checkpoint instead of a fresh model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, value_enum, default_value = "on")]
    satl: Switch,
    #[arg(long)]
    learned_scales: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset used to compute difficulty scores of the stored triplets.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug)]
struct Failure {
    kind: String,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind().to_string(), msg: e.to_string() }
    }
}

fn failure(kind: &str, msg: impl Into<String>) -> Failure {
    Failure { kind: kind.into(), msg: msg.into() }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SATL_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::EvalFitb(a) => eval_fitb(a),
        Command::EvalCompat(a) => eval_compat(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            // a closed pipe (e.g. `| head`) is not a failure
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            let msg = f.msg.replace('\n', " ");
            eprintln!("error kind={} msg={msg}", f.kind);
            ExitCode::FAILURE
        }
    }
}

fn gen(a: GenArgs) -> CmdResult {
    let cfg = GenConfig {
        num_types: a.types,
        items_per_type: a.items_per_type,
        styles: a.styles,
        style_dim: a.style_dim,
        dim: a.dim,
        hard_fraction: a.rho,
        noise: a.noise,
        signal_scale: a.signal_scale,
        epsilon: a.epsilon,
        train_fraction: a.train_fraction,
        candidates: a.candidates,
        seed: a.seed,
    };
    let (ds, diag) = syngen::generate(&cfg)?;
    syngen::write(&a.out, &ds, &diag)?;
    Ok(json!({
        "manifest": a.out.join("manifest.json"),
        "items": ds.store.len(),
        "outfits": ds.outfits.len(),
        "fitb": ds.fitb.len(),
        "compat": ds.compat.len(),
        "hard_items": diag.hard_items,
        "hard_questions": diag.hard_questions,
        "epsilon": diag.epsilon,
    }))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let loss = LossConfig {
        margin: Margin::new(a.margin)?,
        weights: satl_core::LossWeights { sim: a.lambda_sim, l1: a.lambda_l1, l2: a.lambda_l2 },
        satl: matches!(a.satl, Switch::On),
        ds_mode: match a.ds_mode {
            DsModeArg::Step => DsMode::PerStep,
            DsModeArg::Epoch => DsMode::PerEpoch,
        },
        weight_decay: a.weight_decay,
        learned_scales: a.learned_scales,
    };
    Ok(TrainConfig {
        batch_size: a.batch,
        lr: a.lr,
        epochs: a.epochs,
        negatives: a.negatives,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::adam(),
        },
        loss,
        log_every: if a.log.is_some() { a.log_every } else { 0 },
        eval_each_epoch: a.eval_each_epoch,
    })
}

fn train(a: TrainArgs) -> CmdResult {
    let ds = Dataset::load(&a.manifest)?;
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(&ds, Checkpoint::load(path)?)?,
        None => {
            let cfg = train_config(&a)?;
            let model = Model::new(&ds.types, ds.dim(), a.model.config(a.seed))?;
            Trainer::new(&ds, model, cfg)?
        }
    };
    let mut log = match &a.log {
        Some(path) => {
            Some(BufWriter::new(File::create(path).map_err(|e| failure("io", format!("{}: {e}", path.display())))?))
        }
        None => None,
    };
    let mut last_comp = None;
    let mut last_fitb = None;
    while !trainer.is_done() {
        trainer.step()?;
        for record in trainer.take_log() {
            if let satl_core::trainer::LogRecord::Epoch { mean_l_comp, fitb_accuracy, .. } = &record {
                last_comp = Some(*mean_l_comp);
                last_fitb = *fitb_accuracy;
            }
            if let Some(w) = log.as_mut() {
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| failure("io", e.to_string()))?;
            }
        }
    }
    if let Some(mut w) = log {
        w.flush().map_err(|e| failure("io", e.to_string()))?;
    }
    trainer.checkpoint().save(&a.out)?;
    Ok(json!({
        "checkpoint": a.out,
        "steps": trainer.step_count(),
        "epochs": trainer.config().epochs,
        "satl": trainer.config().loss.satl,
        "final_mean_l_comp": last_comp,
        "final_fitb_accuracy": last_fitb,
    }))
}

fn load_pair(manifest: &Path, checkpoint: &Path) -> Result<(Dataset, Model), Failure> {
    let ds = Dataset::load(manifest)?;
    let model = Checkpoint::load(checkpoint)?.model;
    if model.encoder.input_dim() != ds.dim() {
        return Err(failure(
            "config",
            format!("checkpoint expects {} features, dataset has {}", model.encoder.input_dim(), ds.dim()),
        ));
    }
    Ok((ds, model))
}

fn eval_fitb(a: EvalArgs) -> CmdResult {
    let (ds, model) = load_pair(&a.manifest, &a.checkpoint)?;
    let aggregate = match a.aggregate {
        AggregateArg::Mean => Aggregate::Mean,
        AggregateArg::Sum => Aggregate::Sum,
    };
    let res = fitb_eval(&ds.fitb, &model, &ds.store, &FitbOptions { aggregate })?;
    let mut report = json!({
        "task": "fitb",
        "questions": ds.fitb.len(),
        "answered": res.answered,
        "skipped": res.skipped,
        "accuracy": res.accuracy,
    });
    if a.details {
        report["answers"] = serde_json::to_value(&res.answers).expect("answers serialize");
    }
    Ok(report)
}

fn eval_compat(a: EvalArgs) -> CmdResult {
    let (ds, model) = load_pair(&a.manifest, &a.checkpoint)?;
    let res = compat_eval(&ds.compat, &model, &ds.store)?;
    let mut report = json!({
        "task": "compat",
        "questions": ds.compat.len(),
        "skipped": res.skipped,
        "auc": res.auc,
        "threshold_accuracy": res.accuracy,
        "threshold": res.threshold,
    });
    if a.details {
        report["scores"] = serde_json::to_value(&res.scores).expect("scores serialize");
    }
    Ok(report)
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let ds = if a.manifest == "toy" {
        syngen::generate(&GenConfig { seed: a.seed, ..GenConfig::toy() })?.0
    } else {
        Dataset::load(Path::new(&a.manifest))?
    };
    let mut model = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.model,
        None => Model::new(&ds.types, ds.dim(), a.model.config(a.seed))?,
    };
    let loss =
        LossConfig { satl: matches!(a.satl, Switch::On), learned_scales: a.learned_scales, ..Default::default() };
    if a.learned_scales {
        model.enable_loss_scales();
    }
    if a.batch == 0 {
        return Err(failure("config", "batch must be >= 1"));
    }
    let cfg = TrainConfig { seed: a.seed, ..Default::default() };
    let triplets = epoch_triplets(&ds, &cfg, 0)?;
    let batch: Vec<Triplet> = triplets.into_iter().take(a.batch).collect();
    let report = objective_gradcheck(&mut model, &ds.store, &batch, &loss, a.step)?;
    let max = report.max_rel_error();
    let entries: Vec<Value> = report
        .entries
        .iter()
        .map(|e| json!({ "param": e.name, "len": e.len, "max_rel_error": e.max_rel_error }))
        .collect();
    if max >= a.tolerance {
        let worst = report.worst().map(|e| e.name.clone()).unwrap_or_default();
        return Err(failure("gradcheck", format!("max relative error {max:e} >= {:e} at {worst}", a.tolerance)));
    }
    Ok(json!({
        "triplets": batch.len(),
        "params": entries.len(),
        "step": report.step,
        "tolerance": a.tolerance,
        "max_rel_error": max,
        "entries": entries,
    }))
}

fn inspect(a: InspectArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.manifest)?;
    let model = &ckpt.model;
    let masks: Vec<Value> = model
        .bank
        .iter()
        .map(|((u, v), id)| {
            let w = model.params.value(id);
            let l1: f64 = w.iter().map(|x| x.abs()).sum();
            let l2 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            json!({ "pair": [u, v], "l1": l1, "l2": l2 })
        })
        .collect();

    let mut triplets = Vec::new();
    let mut thetas = Vec::new();
    for (key, id) in model.triplet_weights.iter() {
        let ty =
            |i: &satl_core::ItemId| ds.store.item_type(i).cloned().ok_or_else(|| Error::MissingItem(i.to_string()));
        triplets.push(Triplet {
            outfit: String::new(),
            anchor: satl_core::data::OutfitItem { id: key.anchor.clone(), ty: ty(&key.anchor)? },
            positive: satl_core::data::OutfitItem { id: key.positive.clone(), ty: ty(&key.positive)? },
            negative: satl_core::data::OutfitItem { id: key.negative.clone(), ty: ty(&key.negative)? },
        });
        thetas.push(model.params.value(id)[0]);
    }
    let ds_scores = difficulty_scores(model, &ds.store, &triplets, ckpt.train_config.loss.margin)?;
    let mut ranked: Vec<(f64, usize)> =
        ds_scores.iter().zip(&thetas).enumerate().map(|(i, (ds, th))| (softplus(*th) * ds, i)).collect();
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let top: Vec<Value> = ranked
        .iter()
        .take(a.top)
        .map(|&(w, i)| {
            let t = &triplets[i];
            json!({
                "anchor": t.anchor.id,
                "positive": t.positive.id,
                "negative": t.negative.id,
                "w_ds": softplus(thetas[i]),
                "ds": ds_scores[i],
                "weight": w,
            })
        })
        .collect();
    Ok(json!({
        "checkpoint": a.checkpoint,
        "step": ckpt.step,
        "params": model.params.len(),
        "masks": masks,
        "weighted_triplets": triplets.len(),
        "top_triplets": top,
    }))
}

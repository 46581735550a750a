//! End-to-end runs: compose the training set, fine-tune with checkpoint
//! selection, predict the test split, write the submission and a manifest.

mod config;
mod manifest;
mod report;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{BackendKind, BaselineRow, ExperimentConfig, ParaphraserKind};
pub use manifest::RunManifest;
pub use report::{report_table, ReportRow};

use crate::augment::{
    bm25_select, compose, false_inferred, paraphrase_examples, AugmentStep, ComponentOutputs, Origin, ProvenanceLog,
};
use crate::classifier::{
    predict, save_checkpoint, train, Backend, MemorizingBackend, Seq2SeqConfig, TinySeq2Seq, TrainConfig,
    TrainOutcome,
};
use crate::corpus::{load_csv, write_csv_file, Dataset, Label, Task};
use crate::metrics::{evaluate, MetricsReport};
use crate::paraphrase::{HttpProvider, ParaphraseCache, Provider, StubProvider};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("submission: {0}")]
    Submission(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> ExperimentError {
    move |e| ExperimentError::Stage {
        stage,
        message: e.to_string(),
    }
}

pub const COMPOSED_FILE: &str = "train_composed.csv";
pub const PROVENANCE_FILE: &str = "provenance.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const MANIFEST_FILE: &str = "run_manifest.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub struct Inputs {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, ExperimentError> {
    let load = |path: &Path, split: &str| load_csv(path, config.task, split).map_err(stage("ingest"));
    Ok(Inputs {
        train: load(&config.train, "train")?,
        validation: load(&config.validation, "validation")?,
        test: load(&config.test, "test")?,
    })
}

/// A freshly initialized backend of the configured kind.
pub fn fresh_backend<B: Backend + FreshBackend>(config: &TrainConfig) -> B {
    B::fresh(config.seed)
}

pub trait FreshBackend {
    fn fresh(seed: u64) -> Self;
}

impl FreshBackend for MemorizingBackend {
    fn fresh(_seed: u64) -> Self {
        MemorizingBackend::new()
    }
}

impl FreshBackend for TinySeq2Seq {
    fn fresh(seed: u64) -> Self {
        TinySeq2Seq::new(Seq2SeqConfig {
            seed,
            ..Seq2SeqConfig::default()
        })
    }
}

pub struct Composed {
    pub dataset: Dataset,
    pub provenance: ProvenanceLog,
    /// Epoch log of the base model trained to find false-inferred examples.
    pub base_model: Option<TrainOutcome<()>>,
}

fn open_cache(config: &ExperimentConfig) -> Result<ParaphraseCache, ExperimentError> {
    match &config.paraphrase_cache {
        Some(path) => ParaphraseCache::open(path).map_err(stage("augment")),
        None => Ok(ParaphraseCache::in_memory()),
    }
}

fn paraphrase_parts<P: Provider>(
    config: &ExperimentConfig,
    inputs: &Inputs,
    provider: &P,
    parts: &mut ComponentOutputs,
) -> Result<(), ExperimentError> {
    let cache = open_cache(config)?;
    if config.plan.needs(AugmentStep::AddParaphrasedValidation) {
        let (examples, omitted) = paraphrase_examples(
            inputs.validation.examples(),
            Origin::ParaphrasedValidation,
            provider,
            config.client_policy,
            &cache,
        )
        .map_err(stage("augment"))?;
        parts.paraphrased_validation = Some(examples);
        parts.omissions.extend(omitted);
    }
    if config.plan.needs(AugmentStep::AddParaphrasedBm25Selected) {
        let selected = bm25_select(&inputs.train, &inputs.validation, config.bm25);
        let (examples, omitted) =
            paraphrase_examples(&selected, Origin::ParaphrasedBm25Selected, provider, config.client_policy, &cache)
                .map_err(stage("augment"))?;
        parts.paraphrased_bm25 = Some(examples);
        parts.omissions.extend(omitted);
    }
    Ok(())
}

/// Builds every component the plan needs and composes the training set.
pub fn build_training_set<B: Backend + FreshBackend>(
    config: &ExperimentConfig,
    inputs: &Inputs,
) -> Result<Composed, ExperimentError> {
    let mut parts = ComponentOutputs::default();
    let mut base_model = None;
    if config.plan.needs(AugmentStep::AddValidation) {
        parts.validation = Some(inputs.validation.clone());
    }
    if config.plan.needs(AugmentStep::AddFalseInferred) {
        let outcome = train(fresh_backend::<B>(&config.train_config), &inputs.train, &inputs.validation, &config.train_config)
            .map_err(stage("augment"))?;
        let preds = predict(&outcome.best.backend, &inputs.validation, &config.train_config).map_err(stage("augment"))?;
        parts.false_inferred = Some(false_inferred(&preds, &inputs.validation).map_err(stage("augment"))?);
        base_model = Some(TrainOutcome {
            best: crate::classifier::Checkpoint {
                backend: (),
                epoch: outcome.best.epoch,
                report: outcome.best.report,
                score: outcome.best.score,
            },
            log: outcome.log,
        });
    }
    if config.plan.needs(AugmentStep::AddParaphrasedValidation) || config.plan.needs(AugmentStep::AddParaphrasedBm25Selected) {
        match config.paraphraser {
            ParaphraserKind::Stub => paraphrase_parts(config, inputs, &StubProvider::new(), &mut parts)?,
            ParaphraserKind::Http => {
                let provider = HttpProvider::from_env().map_err(stage("augment"))?;
                paraphrase_parts(config, inputs, &provider, &mut parts)?
            }
        }
    }
    let (dataset, provenance) = compose(&config.plan, &inputs.train, &parts).map_err(stage("augment"))?;
    Ok(Composed {
        dataset,
        provenance,
        base_model,
    })
}

pub fn write_composed(config: &ExperimentConfig, composed: &Composed) -> Result<(), ExperimentError> {
    fs::create_dir_all(&config.out_dir)?;
    write_csv_file(&composed.dataset, config.task, config.out_dir.join(COMPOSED_FILE)).map_err(stage("augment"))?;
    let file = BufWriter::new(File::create(config.out_dir.join(PROVENANCE_FILE))?);
    composed.provenance.write_tsv(file)?;
    Ok(())
}

/// TSV with an `id<TAB>label` header (unless disabled), one row per test
/// example in test order. Every test id must be predicted exactly once.
pub fn write_submission(
    predictions: &[(String, Label)],
    test: &Dataset,
    path: &Path,
    header: bool,
) -> Result<(), ExperimentError> {
    let mut seen = HashSet::with_capacity(predictions.len());
    for (id, _) in predictions {
        if !seen.insert(id.as_str()) {
            return Err(ExperimentError::Submission(format!("duplicate prediction for {id:?}")));
        }
    }
    let by_id: std::collections::HashMap<&str, &Label> =
        predictions.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let mut out = BufWriter::new(File::create(path)?);
    if header {
        writeln!(out, "id\tlabel")?;
    }
    for ex in test.examples() {
        let label = by_id
            .get(ex.id.as_str())
            .ok_or_else(|| ExperimentError::Submission(format!("no prediction for test id {:?}", ex.id)))?;
        writeln!(out, "{}\t{}", ex.id, label)?;
    }
    if predictions.len() != test.len() {
        let ids: HashSet<&str> = test.examples().iter().map(|e| e.id.as_str()).collect();
        let extra = predictions.iter().find(|(id, _)| !ids.contains(id.as_str())).map(|(id, _)| id.clone());
        return Err(ExperimentError::Submission(format!("prediction for unknown id {:?}", extra.unwrap_or_default())));
    }
    out.flush()?;
    Ok(())
}

/// Reads an `id<TAB>label` file, header optional.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Label)>, ExperimentError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || (i == 0 && line == "id\tlabel") {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| ExperimentError::Submission(format!("{}:{}: expected id<TAB>label", path.display(), i + 1)))?;
        let label = Label::new(label)
            .map_err(|e| ExperimentError::Submission(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((id.to_owned(), label));
    }
    Ok(out)
}

fn push_epoch_log<B>(manifest: &mut RunManifest, prefix: &str, outcome: &TrainOutcome<B>, config: &TrainConfig) {
    for r in &outcome.log {
        manifest.push(
            format!("{prefix}epoch.{}", r.epoch),
            format!("loss={};{}={}", r.train_loss, config.selection_metric.name(), r.selection_score),
        );
    }
    manifest.push(format!("{prefix}best_epoch"), outcome.best.epoch);
    manifest.push(format!("{prefix}best_score"), outcome.best.score);
}

/// Runs the full pipeline and writes every artifact under `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    match config.backend {
        BackendKind::Mock => run_with::<MemorizingBackend>(config),
        BackendKind::TinySeq2Seq => run_with::<TinySeq2Seq>(config),
    }
}

pub fn run_with<B: Backend + FreshBackend>(config: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    let mut timings: Vec<(&str, u128)> = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&str, u128)>| {
        timings.push((name, clock.elapsed().as_millis()));
        clock = Instant::now();
    };

    let inputs = load_inputs(config)?;
    lap("ingest", &mut timings);

    let composed = build_training_set::<B>(config, &inputs)?;
    write_composed(config, &composed)?;
    lap("augment", &mut timings);

    let outcome = train(fresh_backend::<B>(&config.train_config), &composed.dataset, &inputs.validation, &config.train_config)
        .map_err(stage("train"))?;
    save_checkpoint(&config.out_dir.join(CHECKPOINT_DIR), &outcome, &config.train_config).map_err(stage("train"))?;
    lap("train", &mut timings);

    let predictions = predict(&outcome.best.backend, &inputs.test, &config.train_config).map_err(stage("predict"))?;
    write_submission(&predictions, &inputs.test, &config.out_dir.join(PREDICTIONS_FILE), config.submission_header)?;
    let test_report: Option<MetricsReport> = if inputs.test.is_fully_labeled() && !inputs.test.is_empty() {
        Some(evaluate(&inputs.test.gold(), &predictions, inputs.test.label_space()).map_err(stage("evaluate"))?)
    } else {
        None
    };
    lap("predict", &mut timings);

    let mut m = RunManifest::new();
    m.extend(config.snapshot());
    m.extend(outcome.best.backend.settings());
    m.push("data.train_rows", inputs.train.len());
    m.push("data.validation_rows", inputs.validation.len());
    m.push("data.test_rows", inputs.test.len());
    m.push("composed.size", composed.dataset.len());
    for origin in [
        Origin::Base,
        Origin::Validation,
        Origin::FalseInferred,
        Origin::ParaphrasedValidation,
        Origin::ParaphrasedBm25Selected,
    ] {
        m.push(format!("composed.origin.{}", origin.name()), composed.provenance.count(origin));
    }
    m.push("composed.omissions", composed.provenance.omissions.len());
    m.push("composed.file", COMPOSED_FILE);
    m.push("provenance.file", PROVENANCE_FILE);
    if let Some(base) = &composed.base_model {
        push_epoch_log(&mut m, "base_model.", base, &config.train_config);
    }
    push_epoch_log(&mut m, "", &outcome, &config.train_config);
    m.push_metrics("validation", &outcome.best.report);
    m.push("test.predictions", PREDICTIONS_FILE);
    m.push("test.rows", predictions.len());
    if let Some(report) = &test_report {
        m.push_metrics("test", report);
    }
    for (name, ms) in timings {
        m.push(format!("timing.{name}_ms"), ms);
    }
    m.write_atomic(&config.out_dir.join(MANIFEST_FILE))?;
    Ok(m)
}

/// Output locations of a run, relative to its config.
pub fn output_paths(config: &ExperimentConfig) -> (PathBuf, PathBuf) {
    (config.out_dir.join(PREDICTIONS_FILE), config.out_dir.join(MANIFEST_FILE))
}

pub fn task_of(manifest: &RunManifest) -> Option<Task> {
    manifest.get("task").and_then(Task::parse)
}

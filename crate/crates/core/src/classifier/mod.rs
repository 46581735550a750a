//! Generative classification: labels are produced as text by a
//! sequence-to-sequence backend and decoded back, with a fixed fallback for
//! anything that is not an exact label.

mod backend;
mod seq2seq;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use backend::{whitespace_tokens, Backend, BackendError, MemorizingBackend, TrainPair};
pub use seq2seq::{Seq2SeqConfig, TinySeq2Seq};

use crate::corpus::{window_tokens, CorpusError, Dataset, Label, LabelSpace, Task, TokenWindowPolicy};
use crate::metrics::{evaluate, MetricsError, MetricsReport};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("label {0:?} is not declared")]
    UndeclaredLabel(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("{split} example {id:?} has no label")]
    Unlabeled { split: String, id: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Window(#[from] CorpusError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
}

pub fn verbalize_label<'a>(label: &Label, space: &'a LabelSpace) -> Result<&'a str, ClassifierError> {
    space
        .verbalization_of(label)
        .ok_or_else(|| ClassifierError::UndeclaredLabel(label.to_string()))
}

/// Exact match on the trimmed generation, else the space's fallback.
pub fn decode_label(generated: &str, space: &LabelSpace) -> Label {
    let trimmed = generated.trim();
    space
        .verbalizations()
        .find(|(_, text)| *text == trimmed)
        .map(|(label, _)| label.clone())
        .unwrap_or_else(|| space.default_fallback().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    F1Macro,
    F1Micro,
}

impl SelectionMetric {
    pub fn score(self, report: &MetricsReport) -> f64 {
        match self {
            SelectionMetric::F1Macro => report.macro_avg.f1,
            SelectionMetric::F1Micro => report.micro.f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::F1Macro => "f1_macro",
            SelectionMetric::F1Micro => "f1_micro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1_macro" | "macro" => Some(SelectionMetric::F1Macro),
            "f1_micro" | "micro" => Some(SelectionMetric::F1Micro),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_source_length: usize,
    pub window: TokenWindowPolicy,
    pub selection_metric: SelectionMetric,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let (epochs, max_len, metric) = match task {
            Task::Task3 => (10, 768, SelectionMetric::F1Macro),
            Task::Task5 => (20, 128, SelectionMetric::F1Micro),
        };
        TrainConfig {
            epochs,
            batch_size: 4,
            max_source_length: max_len,
            window: TokenWindowPolicy::head_third(max_len).expect("positive length"),
            selection_metric: metric,
            seed: 42,
        }
    }

    /// Changes the source length and re-derives the one-third/two-thirds window.
    pub fn with_max_source_length(mut self, max_len: usize) -> Result<Self, ClassifierError> {
        self.window = TokenWindowPolicy::head_third(max_len)?;
        self.max_source_length = max_len;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ClassifierError::Config("epochs and batch_size must be positive".into()));
        }
        if self.window.max_len() != self.max_source_length {
            return Err(ClassifierError::Config(format!(
                "window length {} differs from max_source_length {}",
                self.window.max_len(),
                self.max_source_length
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.max_source_length".into(), self.max_source_length.to_string()),
            ("train.window_head".into(), self.window.head_len().to_string()),
            ("train.window_tail".into(), self.window.tail_len().to_string()),
            ("train.selection_metric".into(), self.selection_metric.name().into()),
            ("train.seed".into(), self.seed.to_string()),
        ]
    }
}

/// Tokenizes with the backend's own tokenizer and applies the window.
pub fn encode_input<B: Backend>(backend: &B, text: &str, window: &TokenWindowPolicy) -> Vec<String> {
    window_tokens(&backend.tokenize(text), window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub selection_score: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<B> {
    pub backend: B,
    pub epoch: usize,
    pub report: MetricsReport,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<B> {
    pub best: Checkpoint<B>,
    pub log: Vec<EpochRecord>,
}

/// Index of the first maximum. NaN never wins.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

fn require_labels(ds: &Dataset) -> Result<(), ClassifierError> {
    match ds.examples().iter().find(|e| e.label.is_none()) {
        Some(e) => Err(ClassifierError::Unlabeled {
            split: ds.split_name().to_owned(),
            id: e.id.clone(),
        }),
        None => Ok(()),
    }
}

/// Fine-tunes `backend` for `config.epochs` epochs and keeps the epoch with
/// the best validation score (earliest epoch on ties).
pub fn train<B: Backend>(
    mut backend: B,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome<B>, ClassifierError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ClassifierError::EmptyTrainSet);
    }
    if validation.is_empty() {
        return Err(ClassifierError::EmptyValidation);
    }
    require_labels(train_set)?;
    require_labels(validation)?;

    let space = train_set.label_space();
    let pairs = train_set
        .examples()
        .iter()
        .map(|ex| {
            let label = ex.label.as_ref().expect("checked above");
            Ok(TrainPair {
                input: encode_input(&backend, &ex.text, &config.window),
                target: verbalize_label(label, space)?.to_owned(),
            })
        })
        .collect::<Result<Vec<_>, ClassifierError>>()?;

    let gold = validation.gold();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint<B>> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<Vec<TrainPair>> = order
            .chunks(config.batch_size)
            .map(|chunk| chunk.iter().map(|&i| pairs[i].clone()).collect())
            .collect();
        let train_loss = backend.train_epoch(&batches)?;
        let preds = predict(&backend, validation, config)?;
        let report = evaluate(&gold, &preds, validation.label_space())?;
        let score = config.selection_metric.score(&report);
        let improved = best.as_ref().is_none_or(|b| score > b.score);
        if improved {
            best = Some(Checkpoint {
                backend: backend.clone(),
                epoch,
                report: report.clone(),
                score,
            });
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            selection_score: score,
            report,
        });
    }
    let best = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, log })
}

/// Greedy generation on every input, decoded with fallback. Output order
/// follows the dataset; `batch_size` only controls parallel chunking.
pub fn predict<B: Backend>(
    backend: &B,
    inputs: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<(String, Label)>, ClassifierError> {
    let space = inputs.label_space();
    let chunks: Vec<Vec<(String, Label)>> = inputs
        .examples()
        .par_chunks(config.batch_size.max(1))
        .map(|chunk| {
            chunk
                .iter()
                .map(|ex| {
                    let input = encode_input(backend, &ex.text, &config.window);
                    debug_assert!(input.len() <= config.max_source_length);
                    let generated = backend.generate(&input)?;
                    Ok((ex.id.clone(), decode_label(&generated, space)))
                })
                .collect::<Result<Vec<_>, ClassifierError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub const STATE_FILE: &str = "state.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Writes `state.bin` plus a `key = value` manifest with the config and the
/// per-epoch log.
pub fn save_checkpoint<B: Backend>(
    dir: &Path,
    outcome: &TrainOutcome<B>,
    config: &TrainConfig,
) -> Result<(), ClassifierError> {
    fs::create_dir_all(dir)?;
    outcome.best.backend.save(&dir.join(STATE_FILE))?;
    let mut text = String::new();
    let _ = writeln!(text, "backend = {}", outcome.best.backend.name());
    for (k, v) in config.to_kv().into_iter().chain(outcome.best.backend.settings()) {
        let _ = writeln!(text, "{k} = {v}");
    }
    for r in &outcome.log {
        let _ = writeln!(
            text,
            "epoch.{} = loss={};{}={}",
            r.epoch,
            r.train_loss,
            config.selection_metric.name(),
            r.selection_score
        );
    }
    let _ = writeln!(text, "best_epoch = {}", outcome.best.epoch);
    let _ = writeln!(text, "best_score = {}", outcome.best.score);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, text)?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}

/// Loads the backend state and returns it with the recorded best epoch.
pub fn load_checkpoint<B: Backend>(dir: &Path) -> Result<(B, usize), ClassifierError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let best_epoch = manifest
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == "best_epoch")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| ClassifierError::Manifest("missing best_epoch".into()))?;
    let backend = B::load(&dir.join(STATE_FILE))?;
    Ok((backend, best_epoch))
}

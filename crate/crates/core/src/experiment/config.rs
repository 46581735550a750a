use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::augment::AugmentationPlan;
use crate::bm25::Bm25Params;
use crate::classifier::{SelectionMetric, TrainConfig};
use crate::corpus::Task;
use crate::paraphrase::ClientPolicy;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    TinySeq2Seq,
}

impl BackendKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "mock" => Some(BackendKind::Mock),
            "tiny-seq2seq" | "seq2seq" => Some(BackendKind::TinySeq2Seq),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::TinySeq2Seq => "tiny-seq2seq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParaphraserKind {
    Stub,
    Http,
}

/// An externally published comparison row, e.g. the mean over all teams.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub name: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: Option<f64>,
}

impl BaselineRow {
    /// `f1,precision,recall[,accuracy]`
    pub fn parse(name: &str, value: &str) -> Result<Self, String> {
        let nums = value
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("baseline {name}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        match nums.as_slice() {
            [f1, p, r] => Ok(BaselineRow { name: name.into(), f1: *f1, precision: *p, recall: *r, accuracy: None }),
            [f1, p, r, a] => Ok(BaselineRow { name: name.into(), f1: *f1, precision: *p, recall: *r, accuracy: Some(*a) }),
            _ => Err(format!("baseline {name}: expected 3 or 4 numbers")),
        }
    }
}

/// A `#` with whitespace on both sides (or at line end) starts a trailing
/// comment, so values like `Run #2` survive.
fn strip_trailing_comment(line: &str) -> &str {
    line.char_indices()
        .find(|&(i, c)| {
            c == '#'
                && line[..i].ends_with(char::is_whitespace)
                && line[i + 1..].chars().next().is_none_or(char::is_whitespace)
        })
        .map_or(line, |(i, _)| line[..i].trim_end())
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
    pub backend: BackendKind,
    pub train_config: TrainConfig,
    pub plan: AugmentationPlan,
    pub out_dir: PathBuf,
    pub baselines: Vec<BaselineRow>,
    pub paraphraser: ParaphraserKind,
    pub paraphrase_cache: Option<PathBuf>,
    pub client_policy: ClientPolicy,
    pub bm25: Bm25Params,
    pub submission_header: bool,
    /// Overrides the plan-derived row label in reports.
    pub data_label: Option<String>,
}

impl ExperimentConfig {
    pub fn new(task: Task, train: PathBuf, validation: PathBuf, test: PathBuf, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            task,
            train,
            validation,
            test,
            backend: BackendKind::Mock,
            train_config: TrainConfig::for_task(task),
            plan: AugmentationPlan::default(),
            out_dir,
            baselines: Vec::new(),
            paraphraser: ParaphraserKind::Stub,
            paraphrase_cache: None,
            client_policy: ClientPolicy::default(),
            bm25: Bm25Params::default(),
            submission_header: true,
            data_label: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `key = value` lines; `#` starts a comment line. Relative paths
    /// resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = strip_trailing_comment(line);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ExperimentError::Config(format!("line {}: expected key = value", i + 1)))?;
            if kv.insert(k.trim().to_owned(), v.trim().to_owned()).is_some() {
                return Err(ExperimentError::Config(format!("line {}: duplicate key {}", i + 1, k.trim())));
            }
        }
        let bad = |m: String| ExperimentError::Config(m);
        let mut take = |key: &str| kv.remove(key);
        let task_s = take("task").ok_or_else(|| bad("missing key task".into()))?;
        let task = Task::parse(&task_s).ok_or_else(|| bad(format!("unknown task {task_s:?}")))?;
        let path = |v: Option<String>, key: &str| -> Result<PathBuf, ExperimentError> {
            let v = v.ok_or_else(|| bad(format!("missing key {key}")))?;
            Ok(base_dir.join(v))
        };
        let train = path(take("train"), "train")?;
        let validation = path(take("validation"), "validation")?;
        let test = path(take("test"), "test")?;
        let out_dir = path(take("out").or_else(|| Some("out".into())), "out")?;
        let mut cfg = ExperimentConfig::new(task, train, validation, test, out_dir);

        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ExperimentError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| ExperimentError::Config(format!("{key}: {e}")))
        }

        if let Some(v) = take("backend") {
            cfg.backend = BackendKind::parse(&v).ok_or_else(|| bad(format!("unknown backend {v:?}")))?;
        }
        if let Some(v) = take("plan") {
            cfg.plan = AugmentationPlan::parse(&v).map_err(bad)?;
        }
        if let Some(v) = take("epochs") {
            cfg.train_config.epochs = num("epochs", &v)?;
        }
        if let Some(v) = take("batch_size") {
            cfg.train_config.batch_size = num("batch_size", &v)?;
        }
        if let Some(v) = take("max_source_length") {
            cfg.train_config = cfg
                .train_config
                .with_max_source_length(num("max_source_length", &v)?)
                .map_err(|e| bad(e.to_string()))?;
        }
        if let Some(v) = take("selection_metric") {
            cfg.train_config.selection_metric =
                SelectionMetric::parse(&v).ok_or_else(|| bad(format!("unknown selection_metric {v:?}")))?;
        }
        if let Some(v) = take("seed") {
            cfg.train_config.seed = num("seed", &v)?;
        }
        if let Some(v) = take("paraphraser") {
            cfg.paraphraser = match v.as_str() {
                "stub" => ParaphraserKind::Stub,
                "http" => ParaphraserKind::Http,
                _ => return Err(bad(format!("unknown paraphraser {v:?}"))),
            };
        }
        if let Some(v) = take("paraphrase_cache") {
            cfg.paraphrase_cache = Some(base_dir.join(v));
        }
        if let Some(v) = take("max_concurrent_requests") {
            cfg.client_policy.max_concurrent_requests = num("max_concurrent_requests", &v)?;
        }
        if let Some(v) = take("max_retries") {
            cfg.client_policy.max_retries = num("max_retries", &v)?;
        }
        if let Some(v) = take("backoff_ms") {
            cfg.client_policy.backoff_base = Duration::from_millis(num("backoff_ms", &v)?);
        }
        if let Some(v) = take("requests_per_minute") {
            cfg.client_policy.requests_per_minute_cap = num("requests_per_minute", &v)?;
        }
        let k1 = take("bm25_k1").map(|v| num("bm25_k1", &v)).transpose()?.unwrap_or(cfg.bm25.k1());
        let b = take("bm25_b").map(|v| num("bm25_b", &v)).transpose()?.unwrap_or(cfg.bm25.b());
        cfg.bm25 = Bm25Params::new(k1, b).map_err(|e| bad(e.to_string()))?;
        if let Some(v) = take("submission_header") {
            cfg.submission_header = num("submission_header", &v)?;
        }
        cfg.data_label = take("label");
        for name in ["mean", "median"] {
            if let Some(v) = take(&format!("baseline.{name}")) {
                let title = format!("{}{}", name[..1].to_uppercase(), &name[1..]);
                cfg.baselines.push(BaselineRow::parse(&title, &v).map_err(bad)?);
            }
        }
        if let Some(extra) = kv.keys().next() {
            return Err(bad(format!("unknown key {extra:?}")));
        }
        cfg.train_config.validate().map_err(|e| bad(e.to_string()))?;
        cfg.client_policy.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn data_label(&self) -> String {
        self.data_label.clone().unwrap_or_else(|| self.plan.data_label())
    }

    /// Resolved settings for the run manifest. The output directory is left
    /// out so identical runs in different directories agree.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("task".to_owned(), self.task.name().to_owned()),
            ("data.train".into(), self.train.display().to_string()),
            ("data.validation".into(), self.validation.display().to_string()),
            ("data.test".into(), self.test.display().to_string()),
            ("backend".into(), self.backend.name().into()),
            ("plan".into(), self.plan.to_config_value()),
            ("label".into(), self.data_label()),
            (
                "paraphraser".into(),
                match self.paraphraser {
                    ParaphraserKind::Stub => "stub".into(),
                    ParaphraserKind::Http => "http".into(),
                },
            ),
            ("bm25.k1".into(), self.bm25.k1().to_string()),
            ("bm25.b".into(), self.bm25.b().to_string()),
            ("client.max_concurrent_requests".into(), self.client_policy.max_concurrent_requests.to_string()),
            ("client.max_retries".into(), self.client_policy.max_retries.to_string()),
            ("client.backoff_ms".into(), self.client_policy.backoff_base.as_millis().to_string()),
            ("client.requests_per_minute".into(), self.client_policy.requests_per_minute_cap.to_string()),
            ("submission_header".into(), self.submission_header.to_string()),
        ];
        out.extend(self.train_config.to_kv());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# Task 3, training + validation
task = task3
train = data/train.csv
validation = data/val.csv
test = data/test.csv
out = runs/t3
backend = mock
plan = validation
seed = 7
epochs = 3
baseline.mean = 0.518,0.564,0.537,0.574
baseline.median = 0.579,0.630,0.588,0.627
";
        let cfg = ExperimentConfig::parse(text, Path::new("/exp")).unwrap();
        assert_eq!(cfg.task, Task::Task3);
        assert_eq!(cfg.train, PathBuf::from("/exp/data/train.csv"));
        assert_eq!(cfg.train_config.epochs, 3);
        assert_eq!(cfg.train_config.max_source_length, 768);
        assert_eq!(cfg.train_config.seed, 7);
        assert_eq!(cfg.baselines.len(), 2);
        assert_eq!(cfg.baselines[0].name, "Mean");
        assert_eq!(cfg.baselines[1].accuracy, Some(0.627));
        assert_eq!(cfg.data_label(), "Training + Validation");
    }

    #[test]
    fn trailing_comments_are_ignored() {
        let text = "task = task5\ntrain = a\nvalidation = b\ntest = c\n\
                    backend = tiny-seq2seq   # or mock\nlabel = Run #2 # shown in reports\n";
        let cfg = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.backend, BackendKind::TinySeq2Seq);
        assert_eq!(cfg.data_label(), "Run #2");
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let base = "task = task5\ntrain = a\nvalidation = b\ntest = c\n";
        assert!(ExperimentConfig::parse(base, Path::new(".")).is_ok());
        assert!(ExperimentConfig::parse(&format!("{base}colour = red\n"), Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("task = task5\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse(&format!("{base}backend = gpt\n"), Path::new(".")).is_err());
        assert!(ExperimentConfig::parse(&format!("{base}epochs = 0\n"), Path::new(".")).is_err());
    }

    #[test]
    fn task5_defaults() {
        let cfg = ExperimentConfig::parse("task = task5\ntrain = a\nvalidation = b\ntest = c\n", Path::new(".")).unwrap();
        assert_eq!(cfg.train_config.epochs, 20);
        assert_eq!(cfg.train_config.max_source_length, 128);
        assert_eq!(cfg.train_config.selection_metric, SelectionMetric::F1Micro);
    }
}

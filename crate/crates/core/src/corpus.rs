//! Dataset schema, CSV ingestion, concatenation and the head+tail token window.
//!
//! Texts are kept byte-for-byte as read. Nothing in this module lowercases,
//! strips or otherwise normalizes a post; model inputs are the raw text.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("csv error at line {line}: {source}")]
    Csv { line: u64, source: csv::Error },
    #[error("malformed header {found:?}; expected {expected}")]
    Header { found: Vec<String>, expected: String },
    #[error("row {row}: empty id")]
    EmptyId { row: u64 },
    #[error("row {row}: duplicate id {id:?}")]
    DuplicateId { row: u64, id: String },
    #[error("row {row}: label {label:?} is not in the declared label space")]
    UnknownLabel { row: u64, label: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: u64, expected: usize, found: usize },
    #[error("invalid label {0:?}: labels must be non-empty and contain no whitespace")]
    InvalidLabel(String),
    #[error("invalid label space: {0}")]
    InvalidSpace(String),
    #[error("label spaces differ")]
    SpaceMismatch,
    #[error("invalid token window: head {head} + tail {tail} != max {max}")]
    InvalidWindow { max: usize, head: usize, tail: usize },
    #[error("write failed: {0}")]
    Write(String),
}

/// A class label as it appears in the data files, e.g. `"0"` or `"4"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(value: impl Into<String>) -> Result<Self, CorpusError> {
        let value = value.into();
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidLabel(value));
        }
        Ok(Label(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Label {
    type Error = CorpusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Declared labels, their generated-text verbalizations and the label used
/// when a generation matches none of them.
///
/// The fallback does not have to be declared. Task 3 declares `{1,2,3,4}` and
/// still falls back to `"0"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    declared: Vec<Label>,
    default_fallback: Label,
    verbalization: BTreeMap<Label, String>,
}

impl LabelSpace {
    /// Builds a space whose verbalizations are the label strings themselves.
    pub fn with_identity_verbalization(
        declared: Vec<Label>,
        default_fallback: Label,
    ) -> Result<Self, CorpusError> {
        let verbalization = declared
            .iter()
            .map(|l| (l.clone(), l.as_str().to_owned()))
            .collect();
        Self::new(declared, default_fallback, verbalization)
    }

    pub fn new(
        declared: Vec<Label>,
        default_fallback: Label,
        verbalization: BTreeMap<Label, String>,
    ) -> Result<Self, CorpusError> {
        if declared.is_empty() {
            return Err(CorpusError::InvalidSpace("no declared labels".into()));
        }
        let mut seen = HashSet::new();
        for label in &declared {
            if !seen.insert(label) {
                return Err(CorpusError::InvalidSpace(format!("label {label} declared twice")));
            }
        }
        if verbalization.len() != declared.len()
            || declared.iter().any(|l| !verbalization.contains_key(l))
        {
            return Err(CorpusError::InvalidSpace(
                "verbalization must cover exactly the declared labels".into(),
            ));
        }
        let targets: HashSet<&str> = verbalization.values().map(|s| s.trim()).collect();
        if targets.len() != verbalization.len() {
            return Err(CorpusError::InvalidSpace("verbalization is not one-to-one".into()));
        }
        if verbalization.values().any(|s| s.trim().is_empty() || s.trim() != s) {
            return Err(CorpusError::InvalidSpace(
                "verbalizations must be non-empty and carry no surrounding whitespace".into(),
            ));
        }
        Ok(LabelSpace {
            declared,
            default_fallback,
            verbalization,
        })
    }

    pub fn declared(&self) -> &[Label] {
        &self.declared
    }

    pub fn default_fallback(&self) -> &Label {
        &self.default_fallback
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.verbalization.contains_key(label)
    }

    pub fn verbalization_of(&self, label: &Label) -> Option<&str> {
        self.verbalization.get(label).map(String::as_str)
    }

    pub(crate) fn verbalizations(&self) -> impl Iterator<Item = (&Label, &str)> {
        self.verbalization.iter().map(|(l, s)| (l, s.as_str()))
    }
}

/// The two shared tasks this toolkit is configured for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Four-way effect of outdoor spaces on social-anxiety symptoms (Reddit).
    Task3,
    /// Binary: tweet reports a child with ADHD, autism, delayed speech or asthma.
    Task5,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Task3 => "task3",
            Task::Task5 => "task5",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s.trim().to_ascii_lowercase().as_str() {
            "task3" | "3" => Some(Task::Task3),
            "task5" | "5" => Some(Task::Task5),
            _ => None,
        }
    }

    pub fn label_space(self) -> LabelSpace {
        let labels = |xs: &[&str]| xs.iter().map(|x| Label(x.to_string())).collect::<Vec<_>>();
        let declared = match self {
            Task::Task3 => labels(&["1", "2", "3", "4"]),
            Task::Task5 => labels(&["0", "1"]),
        };
        LabelSpace::with_identity_verbalization(declared, Label("0".into()))
            .expect("built-in label spaces are valid")
    }

    pub fn has_keyword_column(self) -> bool {
        matches!(self, Task::Task3)
    }

    /// Column names in file order, label last.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Task::Task3 => &["post_id", "keyword", "text", "label"],
            Task::Task5 => &["id", "text", "label"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub keyword: Option<String>,
    pub text: String,
    pub label: Option<Label>,
}

impl Example {
    pub fn labeled(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Example {
            id: id.into(),
            keyword: None,
            text: text.into(),
            label: Some(label),
        }
    }
}

/// An immutable, ordered collection of examples over one label space.
///
/// Cloning is cheap; the examples are shared.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Arc<[Example]>,
    label_space: LabelSpace,
    split_name: String,
}

impl Dataset {
    /// Validates id uniqueness and label membership.
    pub fn new(
        examples: Vec<Example>,
        label_space: LabelSpace,
        split_name: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let mut ids = HashSet::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let row = i as u64 + 1;
            if ex.id.is_empty() {
                return Err(CorpusError::EmptyId { row });
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId { row, id: ex.id.clone() });
            }
            if let Some(label) = &ex.label {
                if !label_space.contains(label) {
                    return Err(CorpusError::UnknownLabel { row, label: label.to_string() });
                }
            }
        }
        Ok(Dataset {
            examples: examples.into(),
            label_space,
            split_name: split_name.into(),
        })
    }

    pub fn empty(label_space: LabelSpace, split_name: impl Into<String>) -> Self {
        Dataset {
            examples: Vec::new().into(),
            label_space,
            split_name: split_name.into(),
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.examples.iter().all(|e| e.label.is_some())
    }

    /// `(id, label)` pairs, skipping unlabeled rows.
    pub fn gold(&self) -> Vec<(String, Label)> {
        self.examples
            .iter()
            .filter_map(|e| e.label.clone().map(|l| (e.id.clone(), l)))
            .collect()
    }

    pub fn with_split_name(&self, split_name: impl Into<String>) -> Self {
        Dataset {
            split_name: split_name.into(),
            ..self.clone()
        }
    }
}

/// Reads a task CSV. The label column may be absent (unlabeled test split);
/// an empty label cell is also read as "no label".
pub fn load_csv(
    path: impl AsRef<Path>,
    task: Task,
    split_name: &str,
) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, task, split_name)
}

pub fn read_csv<R: io::Read>(
    reader: R,
    task: Task,
    split_name: &str,
) -> Result<Dataset, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|source| CorpusError::Csv { line: 1, source })?
        .iter()
        .map(str::to_owned)
        .collect();

    let columns = task.columns();
    let with_label = header.len() == columns.len() && header.iter().eq(columns.iter());
    let without_label = header.len() == columns.len() - 1
        && header.iter().eq(columns[..columns.len() - 1].iter());
    if !with_label && !without_label {
        return Err(CorpusError::Header {
            found: header,
            expected: columns.join(","),
        });
    }

    let space = task.label_space();
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|source| CorpusError::Csv {
            line: source.position().map_or(0, |p| p.line()),
            source,
        })?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CorpusError::FieldCount {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let id = record[0].to_owned();
        if id.is_empty() {
            return Err(CorpusError::EmptyId { row });
        }
        if !ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { row, id });
        }
        let (keyword, text) = if task.has_keyword_column() {
            (Some(record[1].to_owned()), record[2].to_owned())
        } else {
            (None, record[1].to_owned())
        };
        let label = if with_label && !record[header.len() - 1].is_empty() {
            let raw = &record[header.len() - 1];
            let label = Label::new(raw)
                .ok()
                .filter(|l| space.contains(l))
                .ok_or_else(|| CorpusError::UnknownLabel { row, label: raw.to_owned() })?;
            Some(label)
        } else {
            None
        };
        examples.push(Example { id, keyword, text, label });
    }
    Dataset::new(examples, space, split_name)
}

/// Writes a dataset in the same dialect [`read_csv`] accepts, label column
/// included.
pub fn write_csv<W: io::Write>(dataset: &Dataset, task: Task, writer: W) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| CorpusError::Write(e.to_string());
    wtr.write_record(task.columns()).map_err(wrap)?;
    for ex in dataset.examples() {
        let label = ex.label.as_ref().map_or("", Label::as_str);
        if task.has_keyword_column() {
            let keyword = ex.keyword.as_deref().unwrap_or("");
            wtr.write_record([ex.id.as_str(), keyword, ex.text.as_str(), label])
        } else {
            wtr.write_record([ex.id.as_str(), ex.text.as_str(), label])
        }
        .map_err(wrap)?;
    }
    wtr.flush().map_err(|e| CorpusError::Write(e.to_string()))
}

pub fn write_csv_file(dataset: &Dataset, task: Task, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref()).map_err(|e| CorpusError::Write(e.to_string()))?;
    write_csv(dataset, task, io::BufWriter::new(file))
}

/// Returns `id` unchanged if free, otherwise the first free `id#dupN`.
pub(crate) fn unique_id(id: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(id) {
        return id.to_owned();
    }
    (1..)
        .map(|n| format!("{id}#dup{n}"))
        .find(|candidate| !taken.contains(candidate))
        .expect("unbounded suffix search")
}

/// All of `a` followed by all of `b`. Duplicated content is kept; an id of
/// `b` that is already taken gets a `#dupN` suffix.
pub fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset, CorpusError> {
    if a.label_space != b.label_space {
        return Err(CorpusError::SpaceMismatch);
    }
    let mut taken: HashSet<String> = a.examples.iter().map(|e| e.id.clone()).collect();
    let mut examples = a.examples.to_vec();
    examples.reserve(b.len());
    for ex in b.examples.iter() {
        let id = unique_id(&ex.id, &taken);
        taken.insert(id.clone());
        examples.push(Example { id, ..ex.clone() });
    }
    Ok(Dataset {
        examples: examples.into(),
        label_space: a.label_space.clone(),
        split_name: a.split_name.clone(),
    })
}

/// Keep the first `head_len` and last `tail_len` tokens of an over-long input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenWindowPolicy {
    max_len: usize,
    head_len: usize,
    tail_len: usize,
}

impl TokenWindowPolicy {
    pub fn new(max_len: usize, head_len: usize, tail_len: usize) -> Result<Self, CorpusError> {
        if max_len == 0 || head_len == 0 || tail_len == 0 || head_len + tail_len != max_len {
            return Err(CorpusError::InvalidWindow {
                max: max_len,
                head: head_len,
                tail: tail_len,
            });
        }
        Ok(TokenWindowPolicy { max_len, head_len, tail_len })
    }

    /// Splits `max_len` one third head, two thirds tail: 768 becomes 256 + 512.
    pub fn head_third(max_len: usize) -> Result<Self, CorpusError> {
        let head = (max_len / 3).max(1);
        Self::new(max_len, head, max_len.saturating_sub(head))
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn head_len(&self) -> usize {
        self.head_len
    }

    pub fn tail_len(&self) -> usize {
        self.tail_len
    }
}

pub fn window_tokens<T: Clone>(tokens: &[T], policy: &TokenWindowPolicy) -> Vec<T> {
    if tokens.len() <= policy.max_len {
        return tokens.to_vec();
    }
    let mut out = Vec::with_capacity(policy.max_len);
    out.extend_from_slice(&tokens[..policy.head_len]);
    out.extend_from_slice(&tokens[tokens.len() - policy.tail_len..]);
    out
}

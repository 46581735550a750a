//! Training-set combinations: validation data, false-inferred validation
//! examples, and paraphrases of validation or BM25-selected training texts.
//!
//! Every example of a composed set carries exactly one origin tag in the
//! provenance log. Paraphrase failures are logged as omissions.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};

use crate::bm25::{analyze, Bm25Index, Bm25Params};
use crate::corpus::{unique_id, Dataset, Example, Label};
use crate::paraphrase::{paraphrase, ClientPolicy, ParaphraseCache, ParaphraseEntry, ParaphraseError, Provider};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("prediction for {0:?} given more than once")]
    DuplicatePrediction(String),
    #[error("no prediction for validation example {0:?}")]
    MissingPrediction(String),
    #[error("prediction for unknown id {0:?}")]
    UnknownPrediction(String),
    #[error("example {0:?} has no label")]
    Unlabeled(String),
    #[error("label {label:?} of {id:?} is outside the base label space")]
    LabelSpace { id: String, label: String },
    #[error("plan step {0} has no input")]
    MissingComponent(AugmentStep),
    #[error("paraphrasing failed: {0}")]
    Paraphrase(#[from] ParaphraseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentStep {
    AddValidation,
    AddFalseInferred,
    AddParaphrasedValidation,
    AddParaphrasedBm25Selected,
}

impl AugmentStep {
    pub fn name(self) -> &'static str {
        match self {
            AugmentStep::AddValidation => "validation",
            AugmentStep::AddFalseInferred => "false_inferred",
            AugmentStep::AddParaphrasedValidation => "paraphrased_validation",
            AugmentStep::AddParaphrasedBm25Selected => "paraphrased_bm25",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            AugmentStep::AddValidation,
            AugmentStep::AddFalseInferred,
            AugmentStep::AddParaphrasedValidation,
            AugmentStep::AddParaphrasedBm25Selected,
        ]
        .into_iter()
        .find(|step| step.name() == s.trim())
    }

    pub fn origin(self) -> Origin {
        match self {
            AugmentStep::AddValidation => Origin::Validation,
            AugmentStep::AddFalseInferred => Origin::FalseInferred,
            AugmentStep::AddParaphrasedValidation => Origin::ParaphrasedValidation,
            AugmentStep::AddParaphrasedBm25Selected => Origin::ParaphrasedBm25Selected,
        }
    }

    fn display_name(self) -> &'static str {
        match self {
            AugmentStep::AddValidation => "Validation",
            AugmentStep::AddFalseInferred => "False inferred",
            AugmentStep::AddParaphrasedValidation | AugmentStep::AddParaphrasedBm25Selected => "Paraphrased",
        }
    }
}

impl fmt::Display for AugmentStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Base,
    Validation,
    FalseInferred,
    ParaphrasedValidation,
    ParaphrasedBm25Selected,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Base => "base",
            Origin::Validation => "validation",
            Origin::FalseInferred => "false_inferred",
            Origin::ParaphrasedValidation => "paraphrased_validation",
            Origin::ParaphrasedBm25Selected => "paraphrased_bm25",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceEntry {
    /// Id in the composed dataset.
    pub id: String,
    pub origin: Origin,
    /// Id of the example this one came from, before any collision suffix.
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Omission {
    pub source_id: String,
    pub origin: Origin,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvenanceLog {
    pub entries: Vec<ProvenanceEntry>,
    pub omissions: Vec<Omission>,
}

impl ProvenanceLog {
    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }

    /// TSV audit file: `id origin source_id note`; omissions have an empty id.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "id\torigin\tsource_id\tnote")?;
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}\t", e.id, e.origin.name(), e.source_id)?;
        }
        for o in &self.omissions {
            let reason = o.reason.replace(['\t', '\n'], " ");
            writeln!(out, "\t{}\t{}\tomitted: {reason}", o.origin.name(), o.source_id)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentationPlan {
    pub components: Vec<AugmentStep>,
}

impl AugmentationPlan {
    pub fn new(components: Vec<AugmentStep>) -> Self {
        AugmentationPlan { components }
    }

    /// Comma-separated step names; empty or `base` means no components.
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "base" {
            return Ok(Self::default());
        }
        s.split(',')
            .map(|part| AugmentStep::parse(part).ok_or_else(|| format!("unknown augmentation step {part:?}")))
            .collect::<Result<_, _>>()
            .map(Self::new)
    }

    pub fn to_config_value(&self) -> String {
        if self.components.is_empty() {
            return "base".into();
        }
        self.components.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
    }

    /// Row label in the comparison tables, e.g. `Training + False inferred`.
    pub fn data_label(&self) -> String {
        std::iter::once("Training")
            .chain(self.components.iter().map(|c| c.display_name()))
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn needs(&self, step: AugmentStep) -> bool {
        self.components.contains(&step)
    }
}

/// Validation examples the model got wrong, with their gold labels, in
/// validation order.
pub fn false_inferred(predictions: &[(String, Label)], validation: &Dataset) -> Result<Vec<Example>, AugmentError> {
    let valid_ids: HashSet<&str> = validation.examples().iter().map(|e| e.id.as_str()).collect();
    let mut by_id: HashMap<&str, &Label> = HashMap::with_capacity(predictions.len());
    for (id, label) in predictions {
        if !valid_ids.contains(id.as_str()) {
            return Err(AugmentError::UnknownPrediction(id.clone()));
        }
        if by_id.insert(id.as_str(), label).is_some() {
            return Err(AugmentError::DuplicatePrediction(id.clone()));
        }
    }
    let mut wrong = Vec::new();
    for ex in validation.examples() {
        let gold = ex.label.as_ref().ok_or_else(|| AugmentError::Unlabeled(ex.id.clone()))?;
        let pred = by_id
            .get(ex.id.as_str())
            .ok_or_else(|| AugmentError::MissingPrediction(ex.id.clone()))?;
        if *pred != gold {
            wrong.push(ex.clone());
        }
    }
    Ok(wrong)
}

/// For each validation text in order, the best-scoring training example not
/// yet taken. Zero-score matches still count, so the result has
/// `min(|validation|, |train|)` examples.
pub fn bm25_select(train: &Dataset, validation: &Dataset, params: Bm25Params) -> Vec<Example> {
    if train.is_empty() || validation.is_empty() {
        return Vec::new();
    }
    let index = Bm25Index::build(
        train.examples().iter().map(|e| (e.id.clone(), e.text.as_str())),
        params,
        analyze,
    )
    .expect("dataset ids are unique");
    let mut taken = vec![false; train.len()];
    let mut selected = Vec::new();
    for query in validation.examples() {
        if selected.len() == train.len() {
            break;
        }
        let ranked = index.rank_all(&analyze(&query.text));
        if let Some((doc, _)) = ranked.into_iter().find(|(doc, _)| !taken[doc.0]) {
            taken[doc.0] = true;
            selected.push(train.examples()[doc.0].clone());
        }
    }
    selected
}

pub const PARAPHRASE_SUFFIX: &str = "#para";

/// One paraphrased example per source (same label, id + `#para`), plus an
/// omission for each item the client could not paraphrase.
pub fn paraphrase_examples<P: Provider>(
    source: &[Example],
    origin: Origin,
    provider: &P,
    policy: ClientPolicy,
    cache: &ParaphraseCache,
) -> Result<(Vec<Example>, Vec<Omission>), AugmentError> {
    if let Some(ex) = source.iter().find(|e| e.label.is_none()) {
        return Err(AugmentError::Unlabeled(ex.id.clone()));
    }
    let texts: Vec<(String, String)> = source.iter().map(|e| (e.id.clone(), e.text.clone())).collect();
    let entries = paraphrase(&texts, provider, policy, cache)?;
    let mut out = Vec::with_capacity(source.len());
    let mut omissions = Vec::new();
    for (ex, entry) in source.iter().zip(entries) {
        match entry {
            ParaphraseEntry::Done(record) => out.push(Example {
                id: format!("{}{PARAPHRASE_SUFFIX}", ex.id),
                keyword: ex.keyword.clone(),
                text: record.paraphrase_text,
                label: ex.label.clone(),
            }),
            ParaphraseEntry::Failed(f) => omissions.push(Omission {
                source_id: f.source_id,
                origin,
                reason: f.reason,
            }),
        }
    }
    Ok((out, omissions))
}

/// Outputs of the individual steps, handed to [`compose`].
#[derive(Debug, Clone, Default)]
pub struct ComponentOutputs {
    pub validation: Option<Dataset>,
    pub false_inferred: Option<Vec<Example>>,
    pub paraphrased_validation: Option<Vec<Example>>,
    pub paraphrased_bm25: Option<Vec<Example>>,
    pub omissions: Vec<Omission>,
}

/// Base examples followed by each planned component in plan order.
pub fn compose(
    plan: &AugmentationPlan,
    base: &Dataset,
    parts: &ComponentOutputs,
) -> Result<(Dataset, ProvenanceLog), AugmentError> {
    let space = base.label_space();
    let mut examples: Vec<Example> = base.examples().to_vec();
    let mut taken: HashSet<String> = examples.iter().map(|e| e.id.clone()).collect();
    let mut log = ProvenanceLog {
        entries: examples
            .iter()
            .map(|e| ProvenanceEntry {
                id: e.id.clone(),
                origin: Origin::Base,
                source_id: e.id.clone(),
            })
            .collect(),
        omissions: Vec::new(),
    };
    for &step in &plan.components {
        let added: &[Example] = match step {
            AugmentStep::AddValidation => {
                let v = parts.validation.as_ref().ok_or(AugmentError::MissingComponent(step))?;
                if v.label_space() != space {
                    return Err(AugmentError::LabelSpace {
                        id: v.split_name().to_owned(),
                        label: "<label space differs>".into(),
                    });
                }
                Some(v.examples())
            }
            AugmentStep::AddFalseInferred => parts.false_inferred.as_deref(),
            AugmentStep::AddParaphrasedValidation => parts.paraphrased_validation.as_deref(),
            AugmentStep::AddParaphrasedBm25Selected => parts.paraphrased_bm25.as_deref(),
        }
        .ok_or(AugmentError::MissingComponent(step))?;
        for ex in added {
            if let Some(label) = &ex.label {
                if !space.contains(label) {
                    return Err(AugmentError::LabelSpace {
                        id: ex.id.clone(),
                        label: label.to_string(),
                    });
                }
            }
            let id = unique_id(&ex.id, &taken);
            taken.insert(id.clone());
            log.entries.push(ProvenanceEntry {
                id: id.clone(),
                origin: step.origin(),
                source_id: ex.id.clone(),
            });
            examples.push(Example { id, ..ex.clone() });
        }
        log.omissions
            .extend(parts.omissions.iter().filter(|o| o.origin == step.origin()).cloned());
    }
    let composed = Dataset::new(examples, space.clone(), base.split_name()).expect("ids made unique above");
    Ok((composed, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::paraphrase::{stub_paraphrase, StubProvider};

    fn l(s: &str) -> Label {
        Label::new(s).unwrap()
    }

    fn ds(rows: &[(&str, &str, &str)], split: &str) -> Dataset {
        let ex = rows.iter().map(|(id, t, lab)| Example::labeled(*id, *t, l(lab))).collect();
        Dataset::new(ex, Task::Task5.label_space(), split).unwrap()
    }

    #[test]
    fn false_inferred_cases() {
        let v = ds(&[("a", "x", "0"), ("b", "y", "1"), ("c", "z", "0"), ("d", "w", "1")], "validation");
        let perfect: Vec<_> = v.gold();
        assert!(false_inferred(&perfect, &v).unwrap().is_empty());
        let preds = vec![
            ("a".to_string(), l("0")),
            ("b".to_string(), l("0")),
            ("c".to_string(), l("0")),
            ("d".to_string(), l("0")),
        ];
        let wrong = false_inferred(&preds, &v).unwrap();
        let ids: Vec<_> = wrong.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["b", "d"]);
        assert!(wrong.iter().all(|e| e.label == Some(l("1"))));
        assert!(matches!(false_inferred(&preds[..3], &v), Err(AugmentError::MissingPrediction(_))));
        let mut dup = preds.clone();
        dup.push(preds[0].clone());
        assert!(matches!(false_inferred(&dup, &v), Err(AugmentError::DuplicatePrediction(_))));
    }

    #[test]
    fn bm25_select_hand_run() {
        let train = ds(&[("t1", "red apple pie", "0"), ("t2", "green apple", "1"), ("t3", "blue sky", "0")], "train");
        let val = ds(&[("v1", "apple apple", "0"), ("v2", "apple", "1")], "validation");
        // v1: t2 (shorter doc) beats t1; v2: t2 taken, t1 next.
        let picked: Vec<_> = bm25_select(&train, &val, Bm25Params::default()).into_iter().map(|e| e.id).collect();
        assert_eq!(picked, ["t2", "t1"]);
        let empty = Dataset::empty(Task::Task5.label_space(), "validation");
        assert!(bm25_select(&train, &empty, Bm25Params::default()).is_empty());
    }

    #[test]
    fn bm25_select_takes_zero_score_matches_by_id() {
        let train = ds(&[("b", "one", "0"), ("a", "two", "1")], "train");
        let val = ds(&[("v1", "zzz", "0"), ("v2", "yyy", "0"), ("v3", "xxx", "0")], "validation");
        let picked: Vec<_> = bm25_select(&train, &val, Bm25Params::default()).into_iter().map(|e| e.id).collect();
        assert_eq!(picked, ["a", "b"]);
    }

    #[test]
    fn paraphrase_examples_keep_labels() {
        let src = ds(&[("a", "my son has asthma", "1"), ("b", "just a mention of adhd", "0")], "v");
        let stub = StubProvider::new();
        let (out, omitted) = paraphrase_examples(
            src.examples(),
            Origin::ParaphrasedValidation,
            &stub,
            ClientPolicy::default(),
            &ParaphraseCache::in_memory(),
        )
        .unwrap();
        assert!(omitted.is_empty());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, "a#para");
        assert_eq!(out[0].text, stub_paraphrase("my son has asthma"));
        assert_eq!(out[1].label, Some(l("0")));
        let (none, _) =
            paraphrase_examples(&[], Origin::ParaphrasedValidation, &stub, ClientPolicy::default(), &ParaphraseCache::in_memory())
                .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn compose_orders_and_tags() {
        let base = ds(&[("t1", "a", "0"), ("t2", "b", "1")], "train");
        let val = ds(&[("t1", "c", "1"), ("v2", "d", "0")], "validation");
        let plan = AugmentationPlan::parse("validation,false_inferred").unwrap();
        let parts = ComponentOutputs {
            validation: Some(val.clone()),
            false_inferred: Some(vec![val.examples()[1].clone()]),
            ..Default::default()
        };
        let (out, log) = compose(&plan, &base, &parts).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(&out.examples()[..2], base.examples());
        let ids: Vec<_> = out.examples().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["t1", "t2", "t1#dup1", "v2", "v2#dup1"]);
        assert_eq!(log.entries.len(), 5);
        assert_eq!(log.count(Origin::Validation), 2);
        assert_eq!(log.count(Origin::FalseInferred), 1);

        let (same, _) = compose(&AugmentationPlan::default(), &base, &ComponentOutputs::default()).unwrap();
        assert_eq!(same.examples(), base.examples());

        let missing = compose(&AugmentationPlan::parse("paraphrased_bm25").unwrap(), &base, &ComponentOutputs::default());
        assert!(matches!(missing, Err(AugmentError::MissingComponent(_))));
    }

    #[test]
    fn plan_labels_and_parsing() {
        assert_eq!(AugmentationPlan::default().data_label(), "Training");
        let p = AugmentationPlan::parse("false_inferred,paraphrased_bm25").unwrap();
        assert_eq!(p.data_label(), "Training + False inferred + Paraphrased");
        assert_eq!(AugmentationPlan::parse(&p.to_config_value()).unwrap(), p);
        assert!(AugmentationPlan::parse("nonsense").is_err());
    }

    #[test]
    fn provenance_tsv() {
        let log = ProvenanceLog {
            entries: vec![ProvenanceEntry { id: "x".into(), origin: Origin::Base, source_id: "x".into() }],
            omissions: vec![Omission { source_id: "y".into(), origin: Origin::ParaphrasedBm25Selected, reason: "refused\tnow".into() }],
        };
        let mut buf = Vec::new();
        log.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\tparaphrased_bm25\ty\tomitted: refused now"));
    }
}

//! Confusion counts and the precision/recall/F1 family.
//!
//! Undefined ratios (0/0) are 0. Macro averages run over the declared classes
//! only. A prediction outside the declared space (the Task 3 fallback `"0"`)
//! counts as a miss of the gold class and as a false positive of nothing.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::{Label, LabelSpace};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("id {0:?} has a gold label but no prediction")]
    MissingPrediction(String),
    #[error("id {0:?} has a prediction but no gold label")]
    UnexpectedPrediction(String),
    #[error("gold label {label:?} for {id:?} is not declared")]
    GoldOutOfSpace { id: String, label: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    /// Parallel to the space's declared labels.
    pub classes: Vec<(Label, ClassCounts)>,
    pub total: u64,
    pub correct: u64,
}

impl ConfusionCounts {
    pub fn from_pairs<'a, I>(pairs: I, space: &LabelSpace) -> Self
    where
        I: IntoIterator<Item = (&'a Label, &'a Label)>,
    {
        let index: HashMap<&Label, usize> = space.declared().iter().enumerate().map(|(i, l)| (l, i)).collect();
        let mut counts = vec![ClassCounts::default(); index.len()];
        let (mut total, mut correct) = (0, 0);
        for (gold, pred) in pairs {
            total += 1;
            if gold == pred {
                correct += 1;
                if let Some(&g) = index.get(gold) {
                    counts[g].tp += 1;
                }
                continue;
            }
            if let Some(&g) = index.get(gold) {
                counts[g].fn_ += 1;
            }
            if let Some(&p) = index.get(pred) {
                counts[p].fp += 1;
            }
        }
        ConfusionCounts {
            classes: space.declared().iter().cloned().zip(counts).collect(),
            total,
            correct,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Prf {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // 2PR/(P+R) written over counts
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<(Label, Prf)>,
    pub macro_avg: Prf,
    pub micro: Prf,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let per_class: Vec<(Label, Prf)> = counts
            .classes
            .iter()
            .map(|(l, c)| (l.clone(), Prf::from_counts(c.tp, c.fp, c.fn_)))
            .collect();
        let n = per_class.len() as f64;
        let mean = |f: fn(&Prf) -> f64| per_class.iter().map(|(_, p)| f(p)).sum::<f64>() / n;
        let macro_avg = Prf {
            precision: mean(|p| p.precision),
            recall: mean(|p| p.recall),
            f1: mean(|p| p.f1),
        };
        let (tp, fp, fn_) = counts
            .classes
            .iter()
            .fold((0, 0, 0), |(a, b, c), (_, k)| (a + k.tp, b + k.fp, c + k.fn_));
        let micro = Prf::from_counts(tp, fp, fn_);
        let accuracy = if counts.total == 0 {
            0.0
        } else {
            counts.correct as f64 / counts.total as f64
        };
        MetricsReport {
            per_class,
            macro_avg,
            micro,
            accuracy,
            counts,
        }
    }

    /// Flat `key = value` block.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (label, p) in &self.per_class {
            let _ = writeln!(out, "class.{label}.precision = {}", p.precision);
            let _ = writeln!(out, "class.{label}.recall = {}", p.recall);
            let _ = writeln!(out, "class.{label}.f1 = {}", p.f1);
        }
        for (name, p) in [("macro", &self.macro_avg), ("micro", &self.micro)] {
            let _ = writeln!(out, "{name}.precision = {}", p.precision);
            let _ = writeln!(out, "{name}.recall = {}", p.recall);
            let _ = writeln!(out, "{name}.f1 = {}", p.f1);
        }
        let _ = writeln!(out, "accuracy = {}", self.accuracy);
        let _ = writeln!(out, "total = {}", self.counts.total);
        let _ = writeln!(out, "correct = {}", self.counts.correct);
        out
    }

    pub const CSV_HEADER: &'static str =
        "macro_f1,macro_precision,macro_recall,micro_f1,micro_precision,micro_recall,accuracy";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.macro_avg.f1,
            self.macro_avg.precision,
            self.macro_avg.recall,
            self.micro.f1,
            self.micro.precision,
            self.micro.recall,
            self.accuracy
        )
    }
}

/// Matches predictions to golds by id and scores them.
pub fn evaluate(
    golds: &[(String, Label)],
    preds: &[(String, Label)],
    space: &LabelSpace,
) -> Result<MetricsReport, MetricsError> {
    if golds.is_empty() && preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut pred_by_id: HashMap<&str, &Label> = HashMap::with_capacity(preds.len());
    for (id, label) in preds {
        if pred_by_id.insert(id.as_str(), label).is_some() {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
    }
    let mut seen = HashSet::with_capacity(golds.len());
    let mut pairs = Vec::with_capacity(golds.len());
    for (id, gold) in golds {
        if !seen.insert(id.as_str()) {
            return Err(MetricsError::DuplicateId(id.clone()));
        }
        if !space.contains(gold) {
            return Err(MetricsError::GoldOutOfSpace {
                id: id.clone(),
                label: gold.to_string(),
            });
        }
        let pred = pred_by_id
            .get(id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(id.clone()))?;
        pairs.push((gold, *pred));
    }
    if let Some((id, _)) = preds.iter().find(|(id, _)| !seen.contains(id.as_str())) {
        return Err(MetricsError::UnexpectedPrediction(id.clone()));
    }
    Ok(MetricsReport::from_counts(ConfusionCounts::from_pairs(pairs, space)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;

    fn space(labels: &[&str]) -> LabelSpace {
        let ls = labels.iter().map(|l| Label::new(*l).unwrap()).collect();
        LabelSpace::with_identity_verbalization(ls, Label::new("0").unwrap()).unwrap()
    }

    fn pairs(xs: &[&str]) -> Vec<(String, Label)> {
        xs.iter()
            .enumerate()
            .map(|(i, l)| (format!("i{i}"), Label::new(*l).unwrap()))
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = pairs(&["1", "2", "1"]);
        let r = evaluate(&g, &g, &space(&["1", "2"])).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg.f1, 1.0);
        assert_eq!(r.micro.f1, 1.0);
    }

    #[test]
    fn majority_guess_hand_computed() {
        let r = evaluate(&pairs(&["1", "2", "1", "2"]), &pairs(&["1", "1", "1", "1"]), &space(&["1", "2"])).unwrap();
        assert!((r.per_class[0].1.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].1.f1, 0.0);
        assert!((r.macro_avg.f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.micro.f1, 0.5);
    }

    #[test]
    fn out_of_space_fallback_is_a_miss_only() {
        let r = evaluate(
            &pairs(&["1", "2", "3", "4"]),
            &pairs(&["0", "2", "3", "4"]),
            &Task::Task3.label_space(),
        )
        .unwrap();
        assert_eq!(r.accuracy, 0.75);
        let f1: Vec<f64> = r.per_class.iter().map(|(_, p)| p.f1).collect();
        assert_eq!(f1, [0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.macro_avg.f1, 0.75);
        assert_eq!(r.counts.classes[0].1, ClassCounts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn id_errors() {
        let s = space(&["1", "2"]);
        let g = pairs(&["1", "2"]);
        assert_eq!(evaluate(&[], &[], &s), Err(MetricsError::Empty));
        assert!(matches!(evaluate(&g, &g[..1], &s), Err(MetricsError::MissingPrediction(_))));
        assert!(matches!(evaluate(&g[..1], &g, &s), Err(MetricsError::UnexpectedPrediction(_))));
        let dup = vec![g[0].clone(), g[0].clone()];
        assert!(matches!(evaluate(&dup, &g, &s), Err(MetricsError::DuplicateId(_))));
        let bad = pairs(&["7"]);
        assert!(matches!(evaluate(&bad, &bad, &s), Err(MetricsError::GoldOutOfSpace { .. })));
    }

    #[test]
    fn all_wrong_macro_is_zero() {
        let r = evaluate(&pairs(&["1", "2"]), &pairs(&["2", "1"]), &space(&["1", "2"])).unwrap();
        assert_eq!(r.macro_avg.f1, 0.0);
    }

    #[test]
    fn serializations() {
        let g = pairs(&["1", "2"]);
        let r = evaluate(&g, &g, &space(&["1", "2"])).unwrap();
        assert!(r.to_kv().contains("macro.f1 = 1\n"));
        assert_eq!(r.to_csv_row().split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    }
}

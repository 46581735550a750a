use crate::corpus::Task;

use super::config::BaselineRow;
use super::manifest::RunManifest;
use super::ExperimentError;

/// Scores shown for one run. Task 3 uses macro averages; Task 5 uses the
/// positive class `"1"`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub data_label: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

fn metric_prefix(task: Task) -> &'static str {
    match task {
        Task::Task3 => "test.macro",
        Task::Task5 => "test.class.1",
    }
}

impl ReportRow {
    pub fn from_manifest(manifest: &RunManifest) -> Result<(Task, Self), ExperimentError> {
        let bad = |m: String| ExperimentError::Report(m);
        let task = manifest
            .get("task")
            .and_then(Task::parse)
            .ok_or_else(|| bad("manifest has no task".into()))?;
        let prefix = metric_prefix(task);
        let num = |key: String| {
            manifest
                .get_f64(&key)
                .ok_or_else(|| bad(format!("manifest has no {key}; was the test split labeled?")))
        };
        Ok((
            task,
            ReportRow {
                data_label: manifest.get("label").unwrap_or("Training").to_owned(),
                f1: num(format!("{prefix}.f1"))?,
                precision: num(format!("{prefix}.precision"))?,
                recall: num(format!("{prefix}.recall"))?,
                accuracy: num("test.accuracy".into())?,
            },
        ))
    }
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let rule = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-");
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ");
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&rule);
            out.push('\n');
        }
    }
    out
}

/// Comparison table in submission order, then any baseline rows.
///
/// Task 3 columns: `#Submission | Data | F1 | Precision | Recall | Accuracy`.
/// Task 5 drops the accuracy column.
pub fn report_table(manifests: &[RunManifest], baselines: &[BaselineRow]) -> Result<String, ExperimentError> {
    let mut task = None;
    let mut rows = Vec::new();
    for m in manifests {
        let (t, row) = ReportRow::from_manifest(m)?;
        match task {
            Some(prev) if prev != t => {
                return Err(ExperimentError::Report(format!("mixed tasks: {prev} and {t}")));
            }
            _ => task = Some(t),
        }
        rows.push(row);
    }
    let with_accuracy = task.unwrap_or(Task::Task3) == Task::Task3;
    let fmt = |x: f64| format!("{x:.3}");
    let mut table = vec![{
        let mut h: Vec<String> = ["#Submission", "Data", "F1", "Precision", "Recall"].map(String::from).to_vec();
        if with_accuracy {
            h.push("Accuracy".into());
        }
        h
    }];
    for (i, r) in rows.iter().enumerate() {
        let mut line = vec![(i + 1).to_string(), r.data_label.clone(), fmt(r.f1), fmt(r.precision), fmt(r.recall)];
        if with_accuracy {
            line.push(fmt(r.accuracy));
        }
        table.push(line);
    }
    for b in baselines {
        let mut line = vec!["-".to_owned(), b.name.clone(), fmt(b.f1), fmt(b.precision), fmt(b.recall)];
        if with_accuracy {
            line.push(b.accuracy.map_or_else(|| "-".to_owned(), fmt));
        }
        table.push(line);
    }
    Ok(render(&table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(task: &str, label: &str, f1: f64) -> RunManifest {
        let mut m = RunManifest::new();
        m.push("task", task);
        m.push("label", label);
        for p in ["test.macro", "test.class.1"] {
            m.push(format!("{p}.f1"), f1);
            m.push(format!("{p}.precision"), f1);
            m.push(format!("{p}.recall"), f1);
        }
        m.push("test.accuracy", f1);
        m
    }

    #[test]
    fn single_run_one_row() {
        let t = report_table(&[manifest("task3", "Training", 0.5)], &[]).unwrap();
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().next().unwrap().ends_with("Accuracy"));
    }

    #[test]
    fn three_runs_and_baselines_keep_submission_order() {
        let runs = [
            manifest("task3", "Training", 0.6),
            manifest("task3", "Training + Paraphrased", 0.4),
            manifest("task3", "Training + Validation", 0.7),
        ];
        let baselines = [
            BaselineRow::parse("Mean", "0.518,0.564,0.537,0.574").unwrap(),
            BaselineRow::parse("Median", "0.579,0.630,0.588,0.627").unwrap(),
        ];
        let t = report_table(&runs, &baselines).unwrap();
        let body: Vec<&str> = t.lines().skip(2).collect();
        assert_eq!(body.len(), 5);
        assert!(body[0].starts_with("1 ") && body[0].contains("| Training "));
        assert!(body[1].contains("Paraphrased"));
        assert!(body[3].contains("Mean") && body[3].contains("0.518"));
    }

    #[test]
    fn task5_has_no_accuracy_and_mixed_tasks_fail() {
        let t = report_table(&[manifest("task5", "Training", 0.8)], &[]).unwrap();
        assert!(!t.contains("Accuracy"));
        assert!(report_table(&[manifest("task5", "a", 0.1), manifest("task3", "b", 0.1)], &[]).is_err());
    }
}

use std::fs;
use std::path::Path;

use gencls_core::augment::{AugmentStep, AugmentationPlan};
use gencls_core::corpus::{load_csv, write_csv_file, Task};
use gencls_core::experiment::report_table;
use gencls_core::experiment::{read_predictions, COMPOSED_FILE, MANIFEST_FILE, PREDICTIONS_FILE, PROVENANCE_FILE};
use gencls_core::synthetic::synthetic_dataset;
use gencls_core::{run_experiment, ExperimentConfig, RunManifest};

fn write_splits(dir: &Path, task: Task, sizes: (usize, usize, usize)) {
    let splits = [("train", sizes.0, "t"), ("validation", sizes.1, "v"), ("test", sizes.2, "x")];
    for (i, (split, n, prefix)) in splits.into_iter().enumerate() {
        let ds = synthetic_dataset(task, n, 100 + i as u64, prefix, split);
        write_csv_file(&ds, task, dir.join(format!("{split}.csv"))).unwrap();
    }
}

fn config(dir: &Path, task: Task, plan: &str, out: &str) -> ExperimentConfig {
    let text = format!(
        "task = {}\ntrain = train.csv\nvalidation = validation.csv\ntest = test.csv\nout = {out}\nbackend = mock\nplan = {plan}\n",
        task.name()
    );
    fs::write(dir.join(format!("{out}.conf")), &text).unwrap();
    ExperimentConfig::load(dir.join(format!("{out}.conf"))).unwrap()
}

#[test]
fn task3_base_run_logs_every_epoch_and_predicts_every_test_row() {
    let dir = tempfile::tempdir().unwrap();
    write_splits(dir.path(), Task::Task3, (40, 12, 15));
    let cfg = config(dir.path(), Task::Task3, "base", "run");
    let m = run_experiment(&cfg).unwrap();

    for e in 1..=10 {
        assert!(m.get(&format!("epoch.{e}")).is_some(), "missing epoch {e}");
    }
    assert!(m.get("epoch.11").is_none());
    let preds = read_predictions(&cfg.out_dir.join(PREDICTIONS_FILE)).unwrap();
    let test = load_csv(dir.path().join("test.csv"), Task::Task3, "test").unwrap();
    let ids: Vec<_> = preds.iter().map(|p| p.0.as_str()).collect();
    let want: Vec<_> = test.examples().iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, want);
    assert!(m.get_f64("test.macro.f1").is_some());
    assert_eq!(RunManifest::read(&cfg.out_dir.join(MANIFEST_FILE)).unwrap(), m);
}

#[test]
fn task5_training_plus_validation_composes_both() {
    let dir = tempfile::tempdir().unwrap();
    write_splits(dir.path(), Task::Task5, (30, 10, 8));
    let cfg = config(dir.path(), Task::Task5, "validation", "run");
    assert_eq!(cfg.plan, AugmentationPlan::new(vec![AugmentStep::AddValidation]));
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.get("composed.size"), Some("40"));
    assert_eq!(m.get("composed.origin.validation"), Some("10"));
    let composed = load_csv(cfg.out_dir.join(COMPOSED_FILE), Task::Task5, "composed").unwrap();
    assert_eq!(composed.len(), 40);
    let provenance = fs::read_to_string(cfg.out_dir.join(PROVENANCE_FILE)).unwrap();
    assert_eq!(provenance.lines().filter(|l| l.contains("\tvalidation")).count(), 10);
}

#[test]
fn full_plan_records_every_origin() {
    let dir = tempfile::tempdir().unwrap();
    write_splits(dir.path(), Task::Task3, (30, 10, 6));
    let plan = "validation,false_inferred,paraphrased_validation,paraphrased_bm25";
    let mut cfg = config(dir.path(), Task::Task3, plan, "run");
    cfg.train_config.epochs = 2;
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.get("composed.origin.paraphrased_validation"), Some("10"));
    assert_eq!(m.get("composed.origin.paraphrased_bm25"), Some("10"));
    assert!(m.get("base_model.best_epoch").is_some());
    let fi: usize = m.get("composed.origin.false_inferred").unwrap().parse().unwrap();
    assert!(fi <= 10);
    assert_eq!(m.get("composed.size").unwrap(), (30 + 10 + fi + 10 + 10).to_string());
}

#[test]
fn rerun_is_byte_identical_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    write_splits(dir.path(), Task::Task3, (30, 10, 10));
    let plan = "validation,paraphrased_bm25";
    let a = config(dir.path(), Task::Task3, plan, "a");
    let b = config(dir.path(), Task::Task3, plan, "b");
    let ma = run_experiment(&a).unwrap();
    let mb = run_experiment(&b).unwrap();
    assert_eq!(ma.without_timings(), mb.without_timings());
    for f in [PREDICTIONS_FILE, COMPOSED_FILE, PROVENANCE_FILE] {
        assert_eq!(fs::read(a.out_dir.join(f)).unwrap(), fs::read(b.out_dir.join(f)).unwrap(), "{f}");
    }
    assert_eq!(report_table(&[ma], &[]).unwrap(), report_table(&[mb], &[]).unwrap());
}

#[test]
fn unlabeled_test_split_still_yields_submission() {
    let dir = tempfile::tempdir().unwrap();
    write_splits(dir.path(), Task::Task5, (20, 6, 0));
    fs::write(dir.path().join("test.csv"), "id,text\nq1,some text\nq2,other words\n").unwrap();
    let cfg = config(dir.path(), Task::Task5, "base", "run");
    let m = run_experiment(&cfg).unwrap();
    assert!(m.get("test.accuracy").is_none());
    let sub = fs::read_to_string(cfg.out_dir.join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(sub.lines().count(), 3);
    assert!(report_table(&[m], &[]).is_err());
}

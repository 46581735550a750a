use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use gencls_core::classifier::{load_checkpoint, predict, save_checkpoint, train, Backend};
use gencls_core::corpus::{load_csv, Dataset, Task};
use gencls_core::experiment::{
    build_training_set, load_inputs, read_predictions, report_table, write_composed, write_submission, BackendKind,
    BaselineRow, FreshBackend, CHECKPOINT_DIR, COMPOSED_FILE, PREDICTIONS_FILE, PROVENANCE_FILE,
};
use gencls_core::{evaluate, run_experiment, ExperimentConfig, MemorizingBackend, RunManifest, TinySeq2Seq};

/// Generative post classification experiments: compose augmented training
/// sets, fine-tune, predict and report.
#[derive(Parser)]
#[command(name = "gencls", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// task3 or task5. With --config it must agree with the file.
    #[arg(long, global = true)]
    task: Option<String>,
    /// mock or tiny-seq2seq; overrides the config.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the three splits and print their label distributions.
    Ingest,
    /// Compose the training set the plan asks for.
    Augment,
    /// Fine-tune on the composed set (built if missing) and save the best checkpoint.
    Train,
    /// Predict the test split with the saved checkpoint.
    Predict,
    /// Score predictions against gold labels.
    Evaluate {
        /// Gold CSV; defaults to the config's test split.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// `id<TAB>label` file; defaults to the run's predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Check predictions cover the test split once each and write the upload file.
    Submit {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Omit the `id<TAB>label` header line.
        #[arg(long)]
        no_header: bool,
    },
    /// Comparison table from run manifests, in the order given.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Extra row as `Name=f1,precision,recall[,accuracy]`.
        #[arg(long = "baseline")]
        baselines: Vec<String>,
    },
    /// All stages end to end; writes the run manifest.
    Run,
}

fn parse_task(s: &str) -> Result<Task> {
    Task::parse(s).with_context(|| format!("unknown task {s:?} (expected task3 or task5)"))
}

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global.config.as_deref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(t) = &global.task {
        let task = parse_task(t)?;
        ensure!(task == cfg.task, "--task {task} disagrees with config task {}", cfg.task);
    }
    if let Some(b) = &global.backend {
        cfg.backend = BackendKind::parse(b).with_context(|| format!("unknown backend {b:?}"))?;
    }
    if let Some(seed) = global.seed {
        cfg.train_config.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_distribution(ds: &Dataset) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in ds.examples() {
        let key = e.label.as_ref().map_or_else(|| "unlabeled".to_owned(), |l| l.to_string());
        *counts.entry(key).or_default() += 1;
    }
    let parts: Vec<String> = counts.iter().map(|(l, n)| format!("{l}:{n}")).collect();
    println!("{:<10} {:>6} rows  {}", ds.split_name(), ds.len(), parts.join(" "));
}

fn composed_or_build<B: Backend + FreshBackend>(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg.out_dir.join(COMPOSED_FILE);
    if path.exists() {
        return load_csv(&path, cfg.task, "composed").with_context(|| format!("reading {}", path.display()));
    }
    let inputs = load_inputs(cfg)?;
    let composed = build_training_set::<B>(cfg, &inputs)?;
    write_composed(cfg, &composed)?;
    Ok(composed.dataset)
}

fn train_cmd<B: Backend + FreshBackend>(cfg: &ExperimentConfig) -> Result<()> {
    let composed = composed_or_build::<B>(cfg)?;
    let validation = load_csv(&cfg.validation, cfg.task, "validation")?;
    let outcome = train(B::fresh(cfg.train_config.seed), &composed, &validation, &cfg.train_config)?;
    let dir = cfg.out_dir.join(CHECKPOINT_DIR);
    save_checkpoint(&dir, &outcome, &cfg.train_config)?;
    for r in &outcome.log {
        println!(
            "epoch {:>2}  loss {:.4}  {} {:.4}",
            r.epoch,
            r.train_loss,
            cfg.train_config.selection_metric.name(),
            r.selection_score
        );
    }
    println!("best epoch {} saved to {}", outcome.best.epoch, dir.display());
    Ok(())
}

fn predict_cmd<B: Backend>(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.out_dir.join(CHECKPOINT_DIR);
    let (backend, epoch) =
        load_checkpoint::<B>(&dir).with_context(|| format!("loading checkpoint from {} (run `train` first)", dir.display()))?;
    let test = load_csv(&cfg.test, cfg.task, "test")?;
    let preds = predict(&backend, &test, &cfg.train_config)?;
    let path = cfg.out_dir.join(PREDICTIONS_FILE);
    write_submission(&preds, &test, &path, cfg.submission_header)?;
    println!("{} predictions from epoch {epoch} written to {}", preds.len(), path.display());
    Ok(())
}

fn with_backend(cfg: &ExperimentConfig, mock: fn(&ExperimentConfig) -> Result<()>, real: fn(&ExperimentConfig) -> Result<()>) -> Result<()> {
    match cfg.backend {
        BackendKind::Mock => mock(cfg),
        BackendKind::TinySeq2Seq => real(cfg),
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest => {
            let cfg = load_config(g)?;
            let inputs = load_inputs(&cfg)?;
            println!("task {}", cfg.task);
            for ds in [&inputs.train, &inputs.validation, &inputs.test] {
                print_distribution(ds);
            }
        }
        Command::Augment => {
            let cfg = load_config(g)?;
            let inputs = load_inputs(&cfg)?;
            let composed = match cfg.backend {
                BackendKind::Mock => build_training_set::<MemorizingBackend>(&cfg, &inputs)?,
                BackendKind::TinySeq2Seq => build_training_set::<TinySeq2Seq>(&cfg, &inputs)?,
            };
            write_composed(&cfg, &composed)?;
            println!("{}: {} rows", cfg.data_label(), composed.dataset.len());
            for o in &composed.provenance.omissions {
                eprintln!("omitted {} ({}): {}", o.source_id, o.origin.name(), o.reason);
            }
            println!(
                "wrote {} and {}",
                cfg.out_dir.join(COMPOSED_FILE).display(),
                cfg.out_dir.join(PROVENANCE_FILE).display()
            );
        }
        Command::Train => {
            let cfg = load_config(g)?;
            with_backend(&cfg, train_cmd::<MemorizingBackend>, train_cmd::<TinySeq2Seq>)?;
        }
        Command::Predict => {
            let cfg = load_config(g)?;
            with_backend(&cfg, predict_cmd::<MemorizingBackend>, predict_cmd::<TinySeq2Seq>)?;
        }
        Command::Evaluate { gold, predictions } => {
            let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
            let task = match (&cfg, &g.task) {
                (Some(c), _) => c.task,
                (None, Some(t)) => parse_task(t)?,
                (None, None) => bail!("evaluate needs --config or --task"),
            };
            let gold_path = gold
                .or_else(|| cfg.as_ref().map(|c| c.test.clone()))
                .context("--gold is required without --config")?;
            let pred_path = predictions
                .or_else(|| cfg.as_ref().map(|c| c.out_dir.join(PREDICTIONS_FILE)))
                .context("--predictions is required without --config")?;
            let gold = load_csv(&gold_path, task, "gold")?;
            ensure!(gold.is_fully_labeled(), "{} has unlabeled rows", gold_path.display());
            let preds = read_predictions(&pred_path)?;
            let report = evaluate(&gold.gold(), &preds, gold.label_space())?;
            print!("{}", report.to_kv());
        }
        Command::Submit { predictions, output, no_header } => {
            let cfg = load_config(g)?;
            let pred_path = predictions.unwrap_or_else(|| cfg.out_dir.join(PREDICTIONS_FILE));
            let preds = read_predictions(&pred_path)?;
            let test = load_csv(&cfg.test, cfg.task, "test")?;
            let header = cfg.submission_header && !no_header;
            write_submission(&preds, &test, &output, header)?;
            println!("{} rows written to {}", test.len(), output.display());
        }
        Command::Report { manifests, baselines } => {
            let mut runs = Vec::with_capacity(manifests.len());
            for p in &manifests {
                runs.push(RunManifest::read(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let mut rows = match &g.config {
                Some(_) => load_config(g)?.baselines,
                None => Vec::new(),
            };
            for b in &baselines {
                let (name, values) = b.split_once('=').with_context(|| format!("baseline {b:?}: expected Name=f1,p,r[,acc]"))?;
                rows.push(BaselineRow::parse(name, values).map_err(anyhow::Error::msg)?);
            }
            print!("{}", report_table(&runs, &rows)?);
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let manifest = run_experiment(&cfg)?;
            let out = cfg.out_dir.as_path();
            summarize(&manifest, out);
        }
    }
    Ok(())
}

fn summarize(m: &RunManifest, out: &Path) {
    let get = |k: &str| m.get(k).unwrap_or("-");
    println!("{} | {} | composed {} rows | best epoch {}", get("task"), get("label"), get("composed.size"), get("best_epoch"));
    match m.get_f64("test.macro.f1") {
        Some(f1) => println!(
            "test macro-F1 {f1:.3}  micro-F1 {:.3}  accuracy {:.3}",
            m.get_f64("test.micro.f1").unwrap_or(f64::NAN),
            m.get_f64("test.accuracy").unwrap_or(f64::NAN)
        ),
        None => println!("test split unlabeled; predictions only"),
    }
    println!("artifacts in {}", out.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

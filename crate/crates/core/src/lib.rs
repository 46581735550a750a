//! Generative text classification with head+tail input windowing, BM25-selected
//! and false-inferred data augmentation, LLM paraphrasing and shared-task
//! style evaluation.

pub mod augment;
pub mod bm25;
pub mod classifier;
pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod paraphrase;
pub mod synthetic;

pub use augment::{AugmentStep, AugmentationPlan, Origin, ProvenanceLog};
pub use bm25::{Bm25Index, Bm25Params};
pub use classifier::{Backend, Checkpoint, MemorizingBackend, SelectionMetric, TinySeq2Seq, TrainConfig};
pub use corpus::{Dataset, Example, Label, LabelSpace, Task, TokenWindowPolicy};
pub use experiment::{run_experiment, ExperimentConfig, RunManifest};
pub use metrics::{evaluate, MetricsReport};
pub use paraphrase::{ClientPolicy, ParaphraseCache, ParaphraseRecord};

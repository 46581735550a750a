use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt backend state: {0}")]
    Corrupt(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

/// One training pair at the backend boundary: an already windowed input and
/// the verbalized target label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub input: Vec<String>,
    pub target: String,
}

/// A sequence-to-sequence model that learns to emit label strings.
///
/// `generate` must be deterministic for a fixed state. Cloning a backend
/// snapshots its state, which is how the trainer keeps the best epoch.
pub trait Backend: Clone + Send + Sync {
    fn name(&self) -> &'static str;

    fn tokenize(&self, text: &str) -> Vec<String>;

    /// One pass over `batches`, one update per batch. Returns the mean
    /// training loss over the epoch.
    fn train_epoch(&mut self, batches: &[Vec<TrainPair>]) -> Result<f64, BackendError>;

    fn generate(&self, input: &[String]) -> Result<String, BackendError>;

    fn save(&self, path: &Path) -> Result<(), BackendError>;

    fn load(path: &Path) -> Result<Self, BackendError>
    where
        Self: Sized;

    /// Hyperparameters worth recording in a run manifest.
    fn settings(&self) -> Vec<(String, String)> {
        Vec::new()
    }
}

pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Deterministic mock: remembers exact inputs and lets every input token vote
/// for the targets it was seen with.
///
/// Unseen inputs get the target with the most votes (ties to the smallest
/// string); inputs with no known token generate the empty string. The epoch
/// loss is the fraction of pairs it got wrong before learning them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorizingBackend {
    memory: BTreeMap<String, String>,
    votes: BTreeMap<String, BTreeMap<String, u64>>,
}

impl MemorizingBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(input: &[String]) -> String {
        input.join(" ")
    }
}

impl Backend for MemorizingBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        whitespace_tokens(text)
    }

    fn train_epoch(&mut self, batches: &[Vec<TrainPair>]) -> Result<f64, BackendError> {
        let mut wrong = 0usize;
        let mut total = 0usize;
        for batch in batches {
            for pair in batch {
                total += 1;
                if self.generate(&pair.input)? != pair.target {
                    wrong += 1;
                }
            }
            for pair in batch {
                let key = Self::key(&pair.input);
                if self.memory.insert(key, pair.target.clone()).is_none() {
                    for token in &pair.input {
                        *self
                            .votes
                            .entry(token.clone())
                            .or_default()
                            .entry(pair.target.clone())
                            .or_default() += 1;
                    }
                }
            }
        }
        Ok(if total == 0 { 0.0 } else { wrong as f64 / total as f64 })
    }

    fn generate(&self, input: &[String]) -> Result<String, BackendError> {
        if let Some(target) = self.memory.get(&Self::key(input)) {
            return Ok(target.clone());
        }
        let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
        for token in input {
            if let Some(v) = self.votes.get(token) {
                for (target, n) in v {
                    *tally.entry(target).or_default() += n;
                }
            }
        }
        let best = tally
            .into_iter()
            .fold(None::<(&str, u64)>, |best, (t, n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((t, n)),
            });
        Ok(best.map(|(t, _)| t.to_owned()).unwrap_or_default())
    }

    fn save(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_vec(self).map_err(|e| BackendError::Failed(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self, BackendError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Corrupt(e.to_string()))
    }
}

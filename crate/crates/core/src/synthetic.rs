//! Seeded synthetic corpora for smoke runs and tests.
//!
//! Every text mixes neutral filler words with cue words drawn from its class,
//! so the classes are separable by vocabulary alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Example, Label, Task};

const FILLER: &[&str] = &[
    "today", "really", "just", "went", "the", "and", "with", "my", "some", "was", "felt", "after",
    "then", "again", "about", "time", "people", "there", "walk", "around", "this", "week", "maybe",
    "still", "kind", "of", "like", "so", "it", "is",
];

const CUES: &[&[&str]] = &[
    &["calm", "relaxed", "peaceful", "better", "refreshed", "soothing"],
    &["nothing", "same", "unchanged", "whatever", "neutral", "indifferent"],
    &["panic", "worse", "crowded", "scared", "overwhelmed", "dread"],
    &["recipe", "football", "laptop", "weather", "election", "movie"],
    &["diagnosed", "therapy", "son", "daughter", "inhaler", "specialist"],
];

/// Generates `n` labeled examples for `task`, classes assigned round-robin.
///
/// Task 3 rows also get a keyword. Ids are `{prefix}{index}`.
pub fn synthetic_dataset(task: Task, n: usize, seed: u64, prefix: &str, split: &str) -> Dataset {
    let space = task.label_space();
    let labels: Vec<Label> = space.declared().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keywords = ["park", "beach", "forest", "lake", "garden"];
    let examples = (0..n)
        .map(|i| {
            let class = i % labels.len();
            let cues = CUES[class % CUES.len()];
            let len = rng.gen_range(6..14);
            let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            for _ in 0..rng.gen_range(1..=3) {
                let pos = rng.gen_range(0..=words.len());
                words.insert(pos, cues.choose(&mut rng).unwrap());
            }
            let text = words.join(" ");
            Example {
                id: format!("{prefix}{i}"),
                keyword: task.has_keyword_column().then(|| keywords[i % keywords.len()].to_owned()),
                text,
                label: Some(labels[class].clone()),
            }
        })
        .collect();
    Dataset::new(examples, space, split).expect("generated ids are unique")
}

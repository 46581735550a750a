//! Seeded inputs shared by the benchmarks.

use gencls_core::corpus::Label;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` documents of 20–120 tokens drawn from a `vocab`-word Zipf-ish vocabulary.
pub fn token_corpus(n: usize, vocab: usize, seed: u64) -> Vec<(String, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(20..120);
            // squaring a uniform draw skews toward low ranks
            let doc = (0..len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    words[((u * u) * vocab as f64) as usize].clone()
                })
                .collect();
            (format!("d{i:06}"), doc)
        })
        .collect()
}

pub fn query(vocab: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

pub type Labeled = Vec<(String, Label)>;

/// Gold/prediction pairs over labels `1..=classes`, about 70% correct.
pub fn label_pairs(n: usize, classes: usize, seed: u64) -> (Labeled, Labeled) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (1..=classes).map(|c| Label::new(c.to_string()).unwrap()).collect();
    let mut golds = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let g = labels.choose(&mut rng).unwrap().clone();
        let p = if rng.gen_bool(0.7) { g.clone() } else { labels.choose(&mut rng).unwrap().clone() };
        golds.push((format!("i{i}"), g));
        preds.push((format!("i{i}"), p));
    }
    (golds, preds)
}

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gencls_bench::{label_pairs, query, token_corpus};
use gencls_core::augment::bm25_select;
use gencls_core::corpus::{window_tokens, Task, TokenWindowPolicy};
use gencls_core::synthetic::synthetic_dataset;
use gencls_core::{evaluate, Bm25Index, Bm25Params};

fn bm25(c: &mut Criterion) {
    let mut group = c.benchmark_group("bm25_top_k");
    for n in [1_000, 10_000] {
        let index = Bm25Index::from_tokens(token_corpus(n, 5_000, 1), Bm25Params::default()).unwrap();
        let q = query(5_000, 12, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &index, |b, index| {
            b.iter(|| index.top_k(black_box(&q), 10))
        });
    }
    group.finish();

    let train = synthetic_dataset(Task::Task3, 2_000, 3, "t", "train");
    let validation = synthetic_dataset(Task::Task3, 200, 4, "v", "validation");
    c.bench_function("bm25_select/2000x200", |b| {
        b.iter(|| bm25_select(black_box(&train), black_box(&validation), Bm25Params::default()))
    });
}

fn metrics(c: &mut Criterion) {
    let space = Task::Task3.label_space();
    let (golds, preds) = label_pairs(10_000, 4, 5);
    c.bench_function("evaluate/10000", |b| b.iter(|| evaluate(black_box(&golds), black_box(&preds), &space).unwrap()));
}

fn window(c: &mut Criterion) {
    let policy = TokenWindowPolicy::head_third(768).unwrap();
    let tokens: Vec<String> = (0..5_000).map(|i| format!("tok{i}")).collect();
    c.bench_function("window_tokens/5000->768", |b| b.iter(|| window_tokens(black_box(&tokens), &policy)));
}

criterion_group!(benches, bm25, metrics, window);
criterion_main!(benches);

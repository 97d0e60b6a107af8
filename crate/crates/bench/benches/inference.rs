use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qe_core::compress::prune_layers;
use std::hint::black_box;

use qe_bench::{corpus, test_inputs, toy_model};

fn single_pair(c: &mut Criterion) {
    let splits = corpus(256);
    let mut group = c.benchmark_group("predict_batch1");
    for layers in [2, 4, 8] {
        let model = toy_model(&splits, layers);
        let x = test_inputs(&model, &splits, 1).remove(0);
        group.bench_with_input(BenchmarkId::from_parameter(layers), &x, |b, x| {
            b.iter(|| model.predict_one(black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn compressed(c: &mut Criterion) {
    let splits = corpus(256);
    let model = toy_model(&splits, 4);
    let inputs = test_inputs(&model, &splits, 32);
    let mut group = c.benchmark_group("predict_32_pairs");
    group.bench_function("full", |b| b.iter(|| model.predict_encoded(black_box(&inputs), 1).unwrap()));
    let shallow = prune_layers(model.clone(), 2).unwrap();
    group.bench_function("layer_prune_2", |b| {
        b.iter(|| shallow.predict_encoded(black_box(&inputs), 1).unwrap())
    });
    let mut tokens = model.clone();
    tokens.retention = Some(vec![12, 8, 6, 4]);
    group.bench_function("token_prune_12_8_6_4", |b| {
        b.iter(|| tokens.predict_encoded(black_box(&inputs), 1).unwrap())
    });
    group.bench_function("batched_32", |b| b.iter(|| model.predict_encoded(black_box(&inputs), 32).unwrap()));
    group.finish();
}

criterion_group!(benches, single_pair, compressed);
criterion_main!(benches);

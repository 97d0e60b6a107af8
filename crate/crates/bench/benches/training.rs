use criterion::{criterion_group, criterion_main, Criterion};
use qe_core::corpus::NormStats;
use qe_core::train::{batch_gradients, targets, Objective, Prepared};
use qe_core::corpus::QualityThreshold;
use std::hint::black_box;

use qe_bench::{corpus, toy_model};

fn minibatch_gradients(c: &mut Criterion) {
    let splits = corpus(256);
    let model = toy_model(&splits, 4);
    let stats = NormStats::fit(&splits.train).unwrap();
    let data = Prepared {
        inputs: model.encode_pairs(&splits.train),
        targets: targets(&splits.train, Objective::Mse, &stats, QualityThreshold(51.0)).unwrap(),
    };
    let trainable = vec![true; model.params().len()];
    let examples: Vec<usize> = (0..32).collect();
    c.bench_function("batch_gradients_32", |b| {
        b.iter(|| batch_gradients(&model, &data, black_box(&examples), &trainable, Objective::Mse, None).unwrap())
    });
}

criterion_group!(benches, minibatch_gradients);
criterion_main!(benches);

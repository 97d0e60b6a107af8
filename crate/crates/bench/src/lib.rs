//! Fixtures shared by the benchmarks.

use qe_core::corpus::{build_vocab, synthesize_corpus, Splits, SynthSpec};
use qe_core::model::{EncodedInput, ModelConfig, QeModel};

pub fn corpus(n_train: usize) -> Splits {
    synthesize_corpus(&SynthSpec {
        n_train,
        n_dev: 64,
        n_test: 64,
        ..SynthSpec::default()
    })
    .expect("valid synthetic spec")
}

/// Untrained model of the reference width with `n_layers` layers.
pub fn toy_model(splits: &Splits, n_layers: usize) -> QeModel<f32> {
    let cfg = ModelConfig {
        n_layers,
        ..ModelConfig::toy()
    };
    QeModel::new(cfg.clone(), build_vocab(&splits.train, cfg.vocab_size)).expect("valid toy config")
}

pub fn test_inputs(model: &QeModel<f32>, splits: &Splits, n: usize) -> Vec<EncodedInput> {
    model.encode_pairs(&splits.test[..n.min(splits.test.len())])
}

use super::*;
use crate::corpus::{build_vocab, synthesize_corpus, Splits, SynthSpec};
use crate::model::{encode_pair, Batch, HeadMode, ModelConfig, QeModel};

fn tiny_corpus() -> Splits {
    synthesize_corpus(&SynthSpec {
        n_train: 200,
        n_dev: 40,
        n_test: 40,
        noise_std: 0.0,
        max_len: 8,
        seed: 21,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn toy(splits: &Splits, mode: HeadMode) -> QeModel<f32> {
    let cfg = ModelConfig {
        vocab_size: 256,
        max_positions: 32,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        n_layers: 4,
        head_hidden: 32,
        head_mode: mode,
        seed: 5,
        ..ModelConfig::toy()
    };
    QeModel::new(cfg, build_vocab(splits.train.iter(), 256)).unwrap()
}

fn quick(epochs: usize, objective: Objective) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: 16,
        objective,
        ..TrainConfig::default()
    }
}

#[test]
fn train_loss_decreases_on_separable_data() {
    let splits = tiny_corpus();
    let opt = OptimizerConfig {
        learning_rate: 1e-3,
        ..OptimizerConfig::synthetic()
    };
    let (_, h) = train(toy(&splits, HeadMode::Regression), &splits, &quick(3, Objective::Mse), &opt).unwrap();
    let l: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(l.len(), 3);
    assert!(l[1] < l[0] && l[2] < l[1], "{l:?}");
}

#[test]
fn freezing_everything_leaves_the_model_untouched() {
    let splits = tiny_corpus();
    let m = toy(&splits, HeadMode::Classification);
    let cfg = TrainConfig {
        freeze: vec!["*".into()],
        ..quick(2, Objective::Bce)
    };
    let (trained, _) = train(m.clone(), &splits, &cfg, &OptimizerConfig::synthetic()).unwrap();
    assert!(trained.bitwise_eq(&m));
}

#[test]
fn freezing_by_prefix() {
    let splits = tiny_corpus();
    let m = toy(&splits, HeadMode::Regression);
    let cfg = TrainConfig {
        freeze: vec!["embeddings".into(), "layers.1".into()],
        ..quick(1, Objective::Mse)
    };
    assert!(cfg.is_frozen("layers.1.attn.wq"));
    assert!(!cfg.is_frozen("layers.10.attn.wq"));
    let (trained, _) = train(m.clone(), &splits, &cfg, &OptimizerConfig::synthetic()).unwrap();
    for ((name, a), b) in m.param_names().iter().zip(m.params()).zip(trained.params()) {
        assert_eq!(a.bitwise_eq(b), cfg.is_frozen(name), "{name}");
    }
}

#[test]
fn same_seed_same_history() {
    let splits = tiny_corpus();
    let run = || train(toy(&splits, HeadMode::Regression), &splits, &quick(2, Objective::Mse), &OptimizerConfig::synthetic()).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert!(ha.same_trajectory(&hb));
    assert!(a.bitwise_eq(&b));
}

#[test]
fn objective_must_match_head() {
    let splits = tiny_corpus();
    let err = train(toy(&splits, HeadMode::Regression), &splits, &quick(1, Objective::Bce), &OptimizerConfig::synthetic());
    assert!(err.is_err());
    let empty = Splits {
        train: vec![],
        ..splits.clone()
    };
    assert!(train(toy(&splits, HeadMode::Regression), &empty, &quick(1, Objective::Mse), &OptimizerConfig::synthetic()).is_err());
}

#[test]
fn model_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        vocab_size: 12,
        max_positions: 10,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        n_layers: 2,
        head_hidden: 6,
        precision: crate::tensor::Precision::F64,
        init_std: 0.3,
        seed: 11,
        ..ModelConfig::toy()
    };
    let model = QeModel::<f64>::new(cfg, crate::corpus::Vocab::build([], 12)).unwrap();
    let a = encode_pair(&[4, 5, 6], &[7, 4], 10);
    let b = encode_pair(&[8], &[9, 10, 11, 4], 10);
    let batch = Batch::collate(&[&a, &b]);
    for (objective, targets) in [(Objective::Mse, [0.7, -1.1]), (Objective::Bce, [1.0, 0.0])] {
        let checks = gradcheck::check_model_gradients(&model, &batch, &targets, objective, 1e-5).unwrap();
        for c in checks {
            assert!(c.rel_error < 1e-6, "{}: {}", c.name, c.rel_error);
            assert_eq!(c.vanishing, c.name.ends_with("attn.bk"), "{}", c.name);
        }
    }
}

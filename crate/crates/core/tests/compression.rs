use qe_core::compress::*;
use qe_core::corpus::{build_vocab, synthesize_corpus, Splits, SynthSpec, Vocab};
use qe_core::model::{count_params, encode_pair, HeadMode, ModelConfig, QeModel};
use qe_core::train::{train, Objective, OptimizerConfig, TrainConfig};
use qe_core::QeError;

fn corpus() -> Splits {
    synthesize_corpus(&SynthSpec {
        n_train: 160,
        n_dev: 40,
        n_test: 40,
        max_len: 8,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn config(layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 256,
        max_positions: 32,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        n_layers: layers,
        head_hidden: 16,
        seed: 8,
        ..ModelConfig::toy()
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs.max(1),
        batch_size: 16,
        objective: Objective::Mse,
        ..TrainConfig::default()
    }
}

fn fine_tuned(splits: &Splits) -> QeModel<f32> {
    let m = QeModel::new(config(4), build_vocab(splits.train.iter(), 256)).unwrap();
    let opt = OptimizerConfig {
        learning_rate: 1e-3,
        ..OptimizerConfig::synthetic()
    };
    train(m, splits, &train_cfg(3), &opt).unwrap().0
}

#[test]
fn layer_pruning_accounting() {
    let m = QeModel::<f32>::new(ModelConfig::toy(), Vocab::build([], 1000)).unwrap();
    let full = count_params(&m);
    let same = prune_layers(m.clone(), 0).unwrap();
    assert!(same.bitwise_eq(&m));
    assert!(same.provenance.is_empty());
    for n in 1..4 {
        let pruned = prune_layers(m.clone(), n).unwrap();
        assert_eq!(full.total - count_params(&pruned).total, n * 49_984);
        assert_eq!(pruned.config.n_layers, 4 - n);
        for (a, b) in pruned.layers.iter().zip(&m.layers) {
            assert_eq!(a, b);
        }
    }
    assert!(matches!(prune_layers(m, 4), Err(QeError::Usage(_))));
}

#[test]
fn module_replacement_contracts() {
    let splits = corpus();
    let teacher = fine_tuned(&splits);

    let copy = build_student(&teacher, 1, TargetInit::CopyTeacherLast, 0).unwrap();
    assert_eq!(hidden_gap(&teacher, &copy, &splits.dev).unwrap(), 0.0);

    let distill = DistillConfig {
        epochs: 2,
        ..DistillConfig::default()
    };
    let (student, history) = replace_modules(&teacher, 2, &splits, &train_cfg(2), &distill).unwrap();
    assert_eq!(student.n_layers(), 3);
    assert_eq!(history.epochs.len(), 2);
    let teacher_params = teacher.params();
    let names = student.param_names();
    let tnames = teacher.param_names();
    for (name, t) in names.iter().zip(student.params()) {
        if name.starts_with("layers.2.") {
            continue;
        }
        let i = tnames.iter().position(|n| n == name).unwrap();
        assert!(t.bitwise_eq(teacher_params[i]), "{name} changed");
    }
    let init = build_student(&teacher, 2, TargetInit::Random, distill.init_seed).unwrap();
    assert!(!init.layers[2].wq.bitwise_eq(&student.layers[2].wq));

    for bad in [1, 5] {
        assert!(replace_modules(&teacher, bad, &splits, &train_cfg(1), &distill).is_err());
    }
}

#[test]
fn soft_extraction_limits() {
    let splits = corpus();
    let model = fine_tuned(&splits);
    let base = model.predict_pairs(&splits.test, 64).unwrap();
    let gold: Vec<f64> = splits.test.iter().map(|p| p.da_mean).collect();
    let base_r = qe_core::eval::pearson(&base, &gold).unwrap();

    let phases = TokenPrunePhases {
        soft_epochs: 2,
        ..TokenPrunePhases::default()
    };
    let cfg = train_cfg(1);
    let (free, _) = train_soft_extraction(&model, 0.0, &splits, &cfg, &phases).unwrap();
    assert!(free.masks.iter().flatten().all(|&v| v >= 0.99), "{:?}", free.masks);
    assert!(free.masks.iter().all(|m| m[0] == 1.0));

    let schedule = extract_retention_schedule(&free);
    let mut kept = model.clone();
    kept.retention = Some(schedule.0.clone());
    let pruned = kept.predict_pairs(&splits.test, 64).unwrap();
    let r = qe_core::eval::pearson(&pruned, &gold).unwrap();
    assert!((r - base_r).abs() < 1e-3, "{r} vs {base_r}");

    let (crushed, _) = train_soft_extraction(&model, 1e3, &splits, &cfg, &phases).unwrap();
    assert!(crushed.mean() < 0.5);
    assert!(crushed.masks.iter().all(|m| m[0] == 1.0));
    assert!(extract_retention_schedule(&crushed).validate().is_ok());
}

#[test]
fn token_pruned_forward() {
    let m = QeModel::<f32>::new(config(4), Vocab::build([], 256)).unwrap();
    let x = encode_pair(&[5, 6, 7, 8, 9, 10, 11], &[12, 13, 14, 15, 16, 17, 18, 19, 20, 21], 32);
    assert_eq!(x.len(), 20);
    let full = prune_tokens_forward(&m, &RetentionSchedule(vec![20; 4]), &x).unwrap();
    assert_eq!(full.to_bits(), m.predict_one(&x).unwrap().to_bits());
    assert!(prune_tokens_forward(&m, &RetentionSchedule(vec![1; 4]), &x).unwrap().is_finite());
    assert!(prune_tokens_forward(&m, &RetentionSchedule(vec![5; 3]), &x).is_err());
}

#[test]
fn token_prune_pipeline_stores_schedule() {
    let splits = corpus();
    let model = fine_tuned(&splits);
    let phases = TokenPrunePhases {
        soft_epochs: 1,
        retrain_epochs: 1,
        ..TokenPrunePhases::default()
    };
    let out = token_prune(model, 0.05, &phases, &splits, &train_cfg(1), &OptimizerConfig::synthetic()).unwrap();
    assert_eq!(out.model.retention.as_ref(), Some(&out.schedule.0));
    assert!(out.schedule.validate().is_ok());
    assert_eq!(out.model.provenance.len(), 1);
    assert!(out.model.predict_pairs(&splits.test, 32).is_ok());
    let _ = HeadMode::Regression;
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::Vocab;
use crate::error::QeError;
use crate::tensor::{Precision, Tape, Tensor};

fn small_config(layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        max_positions: 32,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        n_layers: layers,
        head_hidden: 8,
        init_std: 0.2,
        seed: 3,
        ..ModelConfig::toy()
    }
}

fn model(layers: usize) -> QeModel<f32> {
    QeModel::new(small_config(layers), Vocab::build([], 40)).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng, src: usize, mt: usize) -> EncodedInput {
    let s: Vec<usize> = (0..src).map(|_| rng.random_range(4..40)).collect();
    let m: Vec<usize> = (0..mt).map(|_| rng.random_range(4..40)).collect();
    encode_pair(&s, &m, 32)
}

#[test]
fn reference_parameter_counts() {
    let cfg = ModelConfig::toy();
    let m = QeModel::<f32>::new(cfg.clone(), Vocab::build([], 1000)).unwrap();
    let c = count_params(&m);
    assert_eq!(c.embedding, 72_320);
    assert_eq!(c.per_encoder_layer, 49_984);
    assert_eq!(c.head, 4_225);
    assert_eq!(c.total, 276_481);
    assert_eq!(c, ParamCounts::for_config(&cfg));

    let mut empty = m.clone();
    empty.layers.clear();
    empty.config.n_layers = 0;
    assert_eq!(count_params(&empty).total, 72_320 + 4_225);
    assert_eq!(ParamCounts::for_config(&empty.config).total, 72_320 + 4_225);
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        n_heads: 3,
        ..ModelConfig::toy()
    };
    assert!(matches!(bad.validate(), Err(QeError::Config(_))));
    let no_layers = ModelConfig {
        n_layers: 0,
        ..ModelConfig::toy()
    };
    assert!(no_layers.validate().is_err());
    let wrong_precision = ModelConfig {
        precision: Precision::F64,
        ..ModelConfig::toy()
    };
    assert!(QeModel::<f32>::new(wrong_precision, Vocab::build([], 10)).is_err());
}

#[test]
fn constant_head_ignores_input() {
    let mut m = model(2);
    m.head.w2 = Tensor::zeros(&[8, 1]);
    m.head.b2 = Tensor::full(&[1], 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let x = random_input(&mut rng, 5, 4);
        assert_eq!(m.predict_one(&x).unwrap(), 0.75);
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<EncodedInput> = (0..6).map(|_| random_input(&mut rng, 6, 5)).collect();
    assert_eq!(model(2).predict_encoded(&xs, 4).unwrap(), model(2).predict_encoded(&xs, 4).unwrap());
}

#[test]
fn padding_content_never_matters() {
    let m = model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_input(&mut rng, 4, 3);
    let alone = m.predict_one(&x).unwrap();
    for pad_to in [x.len() + 1, x.len() + 7, 32] {
        let mut batch = Batch::single(&x);
        let (ids, mask) = x.padded(pad_to);
        batch.ids = ids;
        batch.mask = mask.iter().map(|&v| v == 1).collect();
        batch.seq = pad_to;
        for id in batch.ids.iter_mut().skip(x.len()) {
            *id = rng.random_range(0..40);
        }
        let mut tape = Tape::new();
        let bound = m.bind_frozen(&mut tape);
        let out = m.forward(&mut tape, &bound, &batch, ForwardOptions::default()).unwrap();
        let got = tape.value(out.output)[0] as f64;
        assert!((got - alone).abs() <= 1e-6, "{got} vs {alone}");
    }
    // Batched with longer neighbours, the same example scores the same.
    let long = random_input(&mut rng, 12, 10);
    let both = m.predict_encoded(&[x.clone(), long], 2).unwrap();
    assert!((both[0] - alone).abs() <= 1e-6);
}

#[test]
fn too_long_input_is_a_usage_error() {
    let m = model(1);
    let x = EncodedInput {
        input_ids: vec![4; 33],
    };
    assert!(matches!(m.predict_one(&x), Err(QeError::Usage(_))));
}

#[test]
fn full_schedule_is_bit_exact_and_widths_follow_the_schedule() {
    let m = model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_input(&mut rng, 9, 8); // 20 tokens
    assert_eq!(x.len(), 20);
    let run = |schedule: Option<&[usize]>| {
        let batch = Batch::single(&x);
        let mut tape = Tape::new();
        let bound = m.bind_frozen(&mut tape);
        let tokens = schedule.map_or(TokenMode::Full, TokenMode::Hard);
        let out = m
            .forward(&mut tape, &bound, &batch, ForwardOptions { tokens, timer: None })
            .unwrap();
        (tape.value(out.output)[0], out.widths)
    };
    let (base, widths) = run(None);
    assert_eq!(widths, vec![20; 4]);
    let (same, _) = run(Some(&[20, 20, 20, 20]));
    assert_eq!(same.to_bits(), base.to_bits());
    let (_, widths) = run(Some(&[20, 10, 10, 5]));
    assert_eq!(widths, vec![20, 10, 10, 5]);
    let (cls_only, widths) = run(Some(&[1, 1, 1, 1]));
    assert!(cls_only.is_finite());
    assert_eq!(widths, vec![1; 4]);
}

#[test]
fn retention_schedule_must_match_depth() {
    let mut m = model(2);
    m.retention = Some(vec![4]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert!(matches!(m.predict_one(&random_input(&mut rng, 3, 3)), Err(QeError::Usage(_))));
}

#[test]
fn classification_probability_is_open_unit_interval() {
    let mut m = QeModel::<f32>::new(
        ModelConfig {
            head_mode: HeadMode::Classification,
            ..small_config(1)
        },
        Vocab::build([], 40),
    )
    .unwrap();
    m.head.b2 = Tensor::full(&[1], 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = m.predict_one(&random_input(&mut rng, 3, 3)).unwrap();
    let p = crate::tensor::sigmoid(z);
    assert!(p > 0.0 && p <= 1.0 && p.is_finite());
}

mod persistence {
    use super::*;
    use crate::model::checkpoint::{from_bytes, to_bytes};

    fn trained_looking() -> QeModel<f32> {
        let mut m = model(2);
        m.norm_stats
            .per_lang
            .insert("s0".into(), crate::corpus::LangStats {
                // Values whose shortest decimal form needs all 17 digits.
                mean: 61.234567890123456,
                std: 0.1 + 0.2,
            });
        m.retention = Some(vec![10, 6]);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = trained_looking();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, &path).unwrap();
        let back: QeModel<f32> = load_checkpoint(&path).unwrap();
        assert!(back.bitwise_eq(&m));
        assert_eq!(back, m);
        assert_eq!(count_params(&back), count_params(&m));
        assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&back).unwrap());
    }

    #[test]
    fn corruption_truncation_and_version_are_detected() {
        let bytes = to_bytes(&trained_looking()).unwrap();
        let p = std::path::Path::new("mem");
        let mut flipped = bytes.clone();
        let i = bytes.len() - 100;
        flipped[i] ^= 0x10;
        assert!(matches!(from_bytes::<f32>(&flipped, p), Err(QeError::Checksum { .. })));

        let mut in_manifest = bytes.clone();
        in_manifest[30] ^= 0x01;
        assert!(matches!(from_bytes::<f32>(&in_manifest, p), Err(QeError::Checksum { .. })));

        let short = &bytes[..bytes.len() - 40];
        assert!(matches!(from_bytes::<f32>(short, p), Err(QeError::Truncated { .. })));

        let mut old = bytes.clone();
        old[8] = 9;
        assert!(matches!(from_bytes::<f32>(&old, p), Err(QeError::Version { found: 9, .. })));

        assert!(matches!(from_bytes::<f64>(&bytes, p), Err(QeError::Checkpoint { .. })));
    }

    #[test]
    fn head_mode_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        save_checkpoint(&model(1), &path).unwrap();
        assert!(load_checkpoint_for::<f32>(&path, HeadMode::Regression).is_ok());
        assert!(matches!(
            load_checkpoint_for::<f32>(&path, HeadMode::Classification),
            Err(QeError::ModeMismatch { .. })
        ));
    }
}

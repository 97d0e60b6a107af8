use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CompressionPlan, DistillConfig, TargetInit};
use crate::corpus::{SentencePair, Splits};
use crate::error::{QeError, Result};
use crate::model::{Batch, EncodedInput, EncoderLayer, ForwardOptions, ForwardOut, QeModel, TokenMode};
use crate::tensor::{Real, Tape, Var};
use crate::train::{train_with, AuxLoss, OptimizerConfig, TrainConfig, TrainHistory};

/// The teacher's bottom `L − n_replace` layers followed by one target layer.
/// `n_replace = 1` with [`TargetInit::CopyTeacherLast`] reproduces the teacher.
pub fn build_student<T: Real>(teacher: &QeModel<T>, n_replace: usize, init: TargetInit, seed: u64) -> Result<QeModel<T>> {
    let l = teacher.n_layers();
    if n_replace == 0 || n_replace > l {
        return Err(QeError::Usage(format!("cannot replace {n_replace} of {l} layers")));
    }
    let mut student = teacher.clone();
    student.layers.truncate(l - n_replace);
    student.layers.push(match init {
        TargetInit::Random => EncoderLayer::init(&teacher.config, &mut ChaCha8Rng::seed_from_u64(seed)),
        TargetInit::CopyTeacherLast => teacher.layers[l - 1].clone(),
    });
    student.config.n_layers = student.layers.len();
    student.retention = None;
    Ok(student)
}

/// Final-layer hidden states of the teacher, one `[len, d_model]` block per input.
pub fn teacher_hidden<T: Real>(teacher: &QeModel<T>, inputs: &[EncodedInput], batch_size: usize) -> Result<Vec<Vec<T>>> {
    let d = teacher.config.d_model;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedInput> = chunk.iter().collect();
        let batch = Batch::collate(&refs);
        let mut tape = Tape::new();
        let bound = teacher.bind_frozen(&mut tape);
        let opts = ForwardOptions {
            tokens: TokenMode::Full,
            timer: None,
        };
        let fwd = teacher.forward(&mut tape, &bound, &batch, opts)?;
        let h = tape.value(fwd.hidden);
        for (b, x) in chunk.iter().enumerate() {
            let start = b * batch.seq * d;
            out.push(h[start..start + x.len() * d].to_vec());
        }
    }
    Ok(out)
}

/// Hidden-state MSE against the teacher over the real tokens of a batch.
pub struct HiddenMatch<T> {
    targets: Vec<Vec<T>>,
    d_model: usize,
}

impl<T: Real> HiddenMatch<T> {
    pub fn new(teacher: &QeModel<T>, student: &QeModel<T>, inputs: &[EncodedInput], batch_size: usize) -> Result<Self> {
        let (tc, sc) = (&teacher.config, &student.config);
        if tc.d_model != sc.d_model || tc.vocab_size != sc.vocab_size || tc.max_positions != sc.max_positions {
            return Err(QeError::Config("teacher and student configurations are incompatible".into()));
        }
        Ok(Self {
            targets: teacher_hidden(teacher, inputs, batch_size)?,
            d_model: tc.d_model,
        })
    }
}

impl<T: Real> AuxLoss<T> for HiddenMatch<T> {
    fn term<'a>(&self, tape: &mut Tape<'a, T>, out: &ForwardOut, examples: &[usize]) -> Result<Var> {
        let d = self.d_model;
        let mut target = vec![T::zero(); examples.len() * out.seq * d];
        for (b, &i) in examples.iter().enumerate() {
            let t = &self.targets[i];
            target[b * out.seq * d..b * out.seq * d + t.len()].copy_from_slice(t);
        }
        tape.masked_mse(out.hidden, &target, &out.row_mask)
    }
}

/// Mean hidden-state MSE between student and teacher over `pairs`,
/// averaged over real tokens and `d_model`.
pub fn hidden_gap<T: Real>(teacher: &QeModel<T>, student: &QeModel<T>, pairs: &[SentencePair]) -> Result<f64> {
    let inputs = teacher.encode_pairs(pairs);
    let t = teacher_hidden(teacher, &inputs, 64)?;
    let s = teacher_hidden(student, &inputs, 64)?;
    let (mut acc, mut n) = (0.0, 0usize);
    for (a, b) in t.iter().zip(&s) {
        for (x, y) in a.iter().zip(b) {
            let d = (*x - *y).to_f64().unwrap();
            acc += d * d;
            n += 1;
        }
    }
    Ok(acc / n.max(1) as f64)
}

/// Distils the top `n_replace` teacher layers into one freshly initialised
/// layer. Only the target layer trains; the loss is the hidden-state MSE to
/// the teacher's final encoder output plus the task objective, unweighted.
pub fn replace_modules<T: Real>(
    teacher: &QeModel<T>,
    n_replace: usize,
    splits: &Splits,
    train_cfg: &TrainConfig,
    distill: &DistillConfig,
) -> Result<(QeModel<T>, TrainHistory)> {
    let plan = CompressionPlan::ModuleReplace {
        n_replace,
        distill: distill.clone(),
    };
    plan.validate(teacher.n_layers())?;
    let mut student = build_student(teacher, n_replace, distill.init, distill.init_seed)?;
    let target = format!("layers.{}", student.n_layers() - 1);
    let target_prefix = format!("{target}.");
    let freeze = student
        .param_names()
        .into_iter()
        .filter(|n| !n.starts_with(&target_prefix))
        .collect();
    let cfg = TrainConfig {
        max_epochs: distill.epochs,
        freeze,
        ..train_cfg.clone()
    };
    let opt = OptimizerConfig {
        learning_rate: distill.learning_rate,
        ..OptimizerConfig::synthetic()
    };
    let inputs = teacher.encode_pairs(&splits.train);
    let aux = HiddenMatch::new(teacher, &student, &inputs, cfg.eval_batch_size)?;
    student.provenance.push(plan);
    train_with(student, splits, &cfg, &opt, Some(&aux))
}

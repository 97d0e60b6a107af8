use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CompressionPlan, TokenPrunePhases};
use crate::corpus::Splits;
use crate::error::{QeError, Result};
use crate::model::{Batch, EncodedInput, ForwardOptions, QeModel, TokenMode};
use crate::tensor::{Real, Tape, Tensor};
use crate::train::{ensure_norm_stats, targets, train, Objective, OptimizerConfig, TrainConfig, TrainHistory};

/// Tokens kept after each encoder layer, bottom-up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RetentionSchedule(pub Vec<usize>);

impl RetentionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&k| k == 0) || self.0.windows(2).any(|w| w[1] > w[0]) {
            return Err(QeError::Usage(format!(
                "retention schedule {:?} must be positive and non-increasing",
                self.0
            )));
        }
        Ok(())
    }

    /// `K_l = max(1, round(s_l))`, then `K_l ← min(K_l, K_{l−1})` bottom-up.
    pub fn from_sums(sums: &[f64]) -> Self {
        let mut ks: Vec<usize> = sums.iter().map(|s| (s.round().max(1.0)) as usize).collect();
        for l in 1..ks.len() {
            ks[l] = ks[l].min(ks[l - 1]);
        }
        RetentionSchedule(ks)
    }
}

/// One rank-ordered mask per layer; slot 0 always belongs to CLS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftExtractionMask {
    pub masks: Vec<Vec<f64>>,
}

impl SoftExtractionMask {
    pub fn ones(n_layers: usize, slots: usize) -> Self {
        Self {
            masks: vec![vec![1.0; slots]; n_layers],
        }
    }

    pub fn mean(&self) -> f64 {
        let n: usize = self.masks.iter().map(Vec::len).sum();
        self.masks.iter().flatten().sum::<f64>() / n.max(1) as f64
    }

    pub fn sums(&self) -> Vec<f64> {
        self.masks.iter().map(|m| m.iter().sum()).collect()
    }
}

pub fn extract_retention_schedule(masks: &SoftExtractionMask) -> RetentionSchedule {
    RetentionSchedule::from_sums(&masks.sums())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftHistory {
    /// Mean task loss per epoch.
    pub task_loss: Vec<f64>,
    /// Mean mask value after each epoch.
    pub mask_mean: Vec<f64>,
}

fn max_len(inputs: &[EncodedInput]) -> usize {
    inputs.iter().map(EncodedInput::len).max().unwrap_or(1)
}

/// Learns rank-ordered soft masks with the model frozen. Loss is the task
/// objective plus `λ·Σ_l Σ_j mask_{l,j}`; masks take plain SGD steps and
/// are clamped to [0, 1] after each one, with the CLS slot held at 1.
pub fn train_soft_extraction<T: Real>(
    model: &QeModel<T>,
    lambda: f64,
    splits: &Splits,
    cfg: &TrainConfig,
    phases: &TokenPrunePhases,
) -> Result<(SoftExtractionMask, SoftHistory)> {
    if !(lambda >= 0.0) {
        return Err(QeError::Usage(format!("lambda must be non-negative, got {lambda}")));
    }
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(QeError::Degenerate("empty training split".into()));
    }
    let inputs = model.encode_pairs(&splits.train);
    let goal = targets(&splits.train, Objective::for_mode(model.mode()), &model.norm_stats, model.label_threshold.unwrap_or(cfg.threshold))?;
    let n_layers = model.n_layers();
    let slots = max_len(&inputs);
    let mut masks = SoftExtractionMask::ones(n_layers, slots);
    let mut history = SoftHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let lr = phases.mask_lr;
    for _ in 0..phases.soft_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&EncodedInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let y: Vec<T> = chunk.iter().map(|&i| T::c(goal[i])).collect();
            let batch = Batch::collate(&refs);
            let mut tape = Tape::new();
            let bound = model.bind_frozen(&mut tape);
            let mask_vars: Vec<_> = masks
                .masks
                .iter()
                .map(|m| {
                    let t = Tensor::new(vec![slots], m.iter().map(|&v| T::c(v)).collect()).expect("slots > 0");
                    tape.leaf(t, true)
                })
                .collect();
            let opts = ForwardOptions {
                tokens: TokenMode::Soft(&mask_vars),
                timer: None,
            };
            let out = model.forward(&mut tape, &bound, &batch, opts)?;
            let task = match model.mode() {
                crate::model::HeadMode::Regression => tape.mse(out.output, &y)?,
                crate::model::HeadMode::Classification => tape.bce_with_logits(out.output, &y)?,
            };
            let task_value = tape.value(task)[0].to_f64().unwrap();
            if !task_value.is_finite() {
                return Err(QeError::Numeric(format!("soft-extraction loss became {task_value}")));
            }
            loss_sum += task_value * chunk.len() as f64;
            let mut loss = task;
            for &mv in &mask_vars {
                let s = tape.sum(mv);
                let penalty = tape.scale(s, T::c(lambda));
                loss = tape.add(loss, penalty)?;
            }
            let grads = tape.backward(loss)?;
            for (m, &mv) in masks.masks.iter_mut().zip(&mask_vars) {
                let g = grads.get(mv).expect("mask gradient");
                for (v, gj) in m.iter_mut().zip(g) {
                    *v = (*v - lr * gj.to_f64().unwrap()).clamp(0.0, 1.0);
                }
                m[0] = 1.0;
            }
        }
        history.task_loss.push(loss_sum / order.len() as f64);
        history.mask_mean.push(masks.mean());
        log::info!("soft extraction: mask mean {:.4}, sums {:?}", masks.mean(), masks.sums());
    }
    Ok((masks, history))
}

/// Prediction with only the `K_l` most significant tokens leaving layer `l`.
pub fn prune_tokens_forward<T: Real>(model: &QeModel<T>, schedule: &RetentionSchedule, x: &EncodedInput) -> Result<f64> {
    if schedule.0.len() != model.n_layers() {
        return Err(QeError::Usage(format!(
            "schedule has {} entries for {} layers",
            schedule.0.len(),
            model.n_layers()
        )));
    }
    let batch = Batch::single(x);
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let opts = ForwardOptions {
        tokens: TokenMode::Hard(&schedule.0),
        timer: None,
    };
    let out = model.forward(&mut tape, &bound, &batch, opts)?;
    Ok(tape.value(out.output)[0].to_f64().unwrap())
}

pub struct TokenPruneOutcome<T> {
    pub model: QeModel<T>,
    pub masks: SoftExtractionMask,
    pub schedule: RetentionSchedule,
    pub soft: SoftHistory,
    pub retrain: TrainHistory,
}

/// Soft extraction, schedule extraction, then fine-tuning with hard
/// selection active.
pub fn token_prune<T: Real>(
    mut model: QeModel<T>,
    lambda: f64,
    phases: &TokenPrunePhases,
    splits: &Splits,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<TokenPruneOutcome<T>> {
    ensure_norm_stats(&mut model, &splits.train)?;
    let (masks, soft) = train_soft_extraction(&model, lambda, splits, cfg, phases)?;
    let schedule = extract_retention_schedule(&masks);
    schedule.validate()?;
    model.retention = Some(schedule.0.clone());
    model.provenance.push(CompressionPlan::TokenPrune {
        lambda,
        phases: phases.clone(),
    });
    let retrain_cfg = TrainConfig {
        max_epochs: phases.retrain_epochs,
        ..cfg.clone()
    };
    let (model, retrain) = if phases.retrain_epochs > 0 {
        train(model, splits, &retrain_cfg, opt)?
    } else {
        (model, TrainHistory::default())
    };
    Ok(TokenPruneOutcome {
        model,
        masks,
        schedule,
        soft,
        retrain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(RetentionSchedule::from_sums(&[10.0, 12.0, 6.0]).0, vec![10, 10, 6]);
        assert_eq!(RetentionSchedule::from_sums(&[0.2, 0.1]).0, vec![1, 1]);
        let ones = SoftExtractionMask::ones(3, 17);
        assert_eq!(extract_retention_schedule(&ones).0, vec![17, 17, 17]);
        assert!(RetentionSchedule(vec![3, 4]).validate().is_err());
        assert!(RetentionSchedule(vec![3, 0]).validate().is_err());
    }

    proptest! {
        #[test]
        fn emitted_schedules_are_valid(sums in proptest::collection::vec(0.0f64..64.0, 1..12)) {
            let s = RetentionSchedule::from_sums(&sums);
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(s.0.len(), sums.len());
        }
    }
}

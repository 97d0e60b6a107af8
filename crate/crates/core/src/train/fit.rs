use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, AdamState, OptimizerConfig};
use crate::corpus::{binarize, NormStats, QualityThreshold, SentencePair, Splits};
use crate::error::{QeError, Result};
use crate::eval::{f1, pearson};
use crate::model::{Batch, EncodedInput, ForwardOptions, ForwardOut, HeadMode, QeModel};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mse,
    Bce,
}

impl Objective {
    pub fn for_mode(mode: HeadMode) -> Self {
        match mode {
            HeadMode::Regression => Objective::Mse,
            HeadMode::Classification => Objective::Bce,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Parameter names (or dotted prefixes such as `layers.0`) that stay fixed.
    pub freeze: Vec<String>,
    /// Raw-DA cutoff that turns scores into labels for the BCE objective.
    pub threshold: QualityThreshold,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            objective: Objective::Mse,
            freeze: Vec::new(),
            threshold: QualityThreshold(51.0),
            eval_batch_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.eval_batch_size == 0 {
            return Err(QeError::Config(
                "batch_size, eval_batch_size and patience must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze.iter().any(|p| {
            p == "*" || name == p || (name.len() > p.len() && name.starts_with(p.as_str()) && name.as_bytes()[p.len()] == b'.')
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Pearson (regression) or F1 (classification) on the dev split;
    /// absent when undefined, e.g. for constant predictions.
    pub dev_metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub dev_metric_name: String,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Equality of everything except wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.stopped_early == other.stopped_early
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.dev_metric.map(f64::to_bits) == b.dev_metric.map(f64::to_bits)
            })
    }

    pub fn best_dev_metric(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.epochs.get(best - 1)?.dev_metric
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// An extra differentiable term added to the task loss of every batch.
/// `examples` are the positions of the batch members in the training split.
pub trait AuxLoss<T: Real> {
    fn term<'a>(&self, tape: &mut Tape<'a, T>, out: &ForwardOut, examples: &[usize]) -> Result<Var>;
}

/// Encoded inputs with the targets the objective compares against.
pub struct Prepared {
    pub inputs: Vec<EncodedInput>,
    pub targets: Vec<f64>,
}

/// z-scores for MSE, 0/1 acceptability labels for BCE.
pub fn targets(pairs: &[SentencePair], objective: Objective, stats: &NormStats, threshold: QualityThreshold) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| match objective {
            Objective::Mse => stats.to_z(&p.lang_pair, p.da_mean),
            Objective::Bce => Ok(if binarize(p.da_mean, threshold).is_acceptable() { 1.0 } else { 0.0 }),
        })
        .collect()
}

fn prepare<T: Real>(model: &QeModel<T>, pairs: &[SentencePair], cfg: &TrainConfig) -> Result<Prepared> {
    Ok(Prepared {
        inputs: model.encode_pairs(pairs),
        targets: targets(pairs, cfg.objective, &model.norm_stats, cfg.threshold)?,
    })
}

/// Dev-selection metric of `model` on prepared data.
pub fn dev_metric<T: Real>(model: &QeModel<T>, data: &Prepared, objective: Objective, batch_size: usize) -> Result<Option<f64>> {
    let preds = model.predict_encoded(&data.inputs, batch_size)?;
    match objective {
        Objective::Mse => match pearson(&preds, &data.targets) {
            Ok(r) => Ok(Some(r)),
            Err(QeError::UndefinedCorrelation(_)) => Ok(None),
            Err(e) => Err(e),
        },
        Objective::Bce => {
            let p: Vec<bool> = preds.iter().map(|&z| z >= 0.0).collect();
            let g: Vec<bool> = data.targets.iter().map(|&y| y > 0.5).collect();
            Ok(Some(f1(&p, &g)?.value))
        }
    }
}

/// Fits normalisation statistics on the training split unless the model
/// already carries some (e.g. when fine-tuning a compressed model).
pub fn ensure_norm_stats<T: Real>(model: &mut QeModel<T>, train: &[SentencePair]) -> Result<()> {
    if model.norm_stats.per_lang.is_empty() {
        model.norm_stats = NormStats::fit(train)?;
    }
    Ok(())
}

pub fn train<T: Real>(
    model: QeModel<T>,
    splits: &Splits,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<(QeModel<T>, TrainHistory)> {
    train_with(model, splits, cfg, opt, None)
}

/// Minibatch AdamW with seeded shuffling, early stopping on the dev metric
/// and restoration of the best dev epoch.
pub fn train_with<T: Real>(
    mut model: QeModel<T>,
    splits: &Splits,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
    aux: Option<&dyn AuxLoss<T>>,
) -> Result<(QeModel<T>, TrainHistory)> {
    cfg.validate()?;
    opt.validate()?;
    if splits.train.is_empty() {
        return Err(QeError::Degenerate("empty training split".into()));
    }
    if splits.dev.is_empty() {
        return Err(QeError::Degenerate("empty dev split; early stopping needs one".into()));
    }
    if Objective::for_mode(model.mode()) != cfg.objective {
        return Err(QeError::Config(format!(
            "{:?} objective does not fit a {} head",
            cfg.objective,
            model.mode().as_str()
        )));
    }
    ensure_norm_stats(&mut model, &splits.train)?;
    if cfg.objective == Objective::Bce {
        model.label_threshold = Some(cfg.threshold);
    }
    let train = prepare(&model, &splits.train, cfg)?;
    let dev = prepare(&model, &splits.dev, cfg)?;
    let names = model.param_names();
    let trainable: Vec<bool> = names.iter().map(|n| !cfg.is_frozen(n)).collect();
    let any_trainable = trainable.iter().any(|&t| t);
    let mut state = AdamState::<T>::new(model.params().iter().map(|p| p.numel()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.inputs.len()).collect();

    let mut history = TrainHistory {
        dev_metric_name: match cfg.objective {
            Objective::Mse => "pearson".into(),
            Objective::Bce => format!("f1_{}", cfg.threshold.label()),
        },
        ..Default::default()
    };
    let mut best: Option<(f64, QeModel<T>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(&model, &train, chunk, &trainable, cfg.objective, aux)?;
            loss_sum += loss * chunk.len() as f64;
            if any_trainable {
                adamw_step(&mut model.params_mut(), &grads, &mut state, opt)?;
            }
        }
        let train_loss = loss_sum / order.len() as f64;
        let metric = dev_metric(&model, &dev, cfg.objective, cfg.eval_batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric: metric,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, dev {} {}",
            history.dev_metric_name,
            metric.map_or("undefined".to_string(), |m| format!("{m:.4}"))
        );
        let improved = match (metric, &best) {
            (Some(m), Some((b, _))) => m > *b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((metric.unwrap(), model.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok((model, history))
}

/// Loss of one minibatch and the gradients of the trainable parameters
/// (`None` for frozen ones).
pub fn batch_gradients<T: Real>(
    model: &QeModel<T>,
    data: &Prepared,
    examples: &[usize],
    trainable: &[bool],
    objective: Objective,
    aux: Option<&dyn AuxLoss<T>>,
) -> Result<(f64, Vec<Option<Vec<T>>>)> {
    let inputs: Vec<&EncodedInput> = examples.iter().map(|&i| &data.inputs[i]).collect();
    let target: Vec<T> = examples.iter().map(|&i| T::c(data.targets[i])).collect();
    let batch = Batch::collate(&inputs);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, trainable)?;
    let out = model.forward(&mut tape, &bound, &batch, ForwardOptions::default())?;
    let mut loss = match objective {
        Objective::Mse => tape.mse(out.output, &target)?,
        Objective::Bce => tape.bce_with_logits(out.output, &target)?,
    };
    if let Some(aux) = aux {
        let extra = aux.term(&mut tape, &out, examples)?;
        loss = tape.add(loss, extra)?;
    }
    let value = tape.value(loss)[0].to_f64().unwrap();
    if !value.is_finite() {
        return Err(QeError::Numeric(format!("training loss became {value}")));
    }
    let mut grads = if trainable.iter().any(|&t| t) {
        Some(tape.backward(loss)?)
    } else {
        None
    };
    let per_param = bound
        .vars
        .iter()
        .zip(trainable)
        .map(|(&v, &t)| if t { grads.as_mut().and_then(|g| g.take(v)) } else { None })
        .collect();
    Ok((value, per_param))
}

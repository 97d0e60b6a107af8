//! Layer pruning, token pruning and module replacement.

mod layer;
mod plan;
mod replace;
mod token;

pub use layer::prune_layers;
pub use plan::{
    layer_prune_preset, module_replace_preset, CompressionPlan, DistillConfig, TargetInit, TokenPrunePhases,
    LAYER_PRUNE_PRESET_24, MODULE_REPLACE_PRESET_24,
};
pub use replace::{build_student, hidden_gap, replace_modules, teacher_hidden, HiddenMatch};
pub use token::{
    extract_retention_schedule, prune_tokens_forward, token_prune, train_soft_extraction, RetentionSchedule,
    SoftExtractionMask, SoftHistory, TokenPruneOutcome,
};

use crate::corpus::Splits;
use crate::error::Result;
use crate::model::QeModel;
use crate::tensor::Real;
use crate::train::{train, OptimizerConfig, TrainConfig, TrainHistory};

/// A compressed, fine-tuned model and the history of its last training phase.
pub struct Compressed<T> {
    pub model: QeModel<T>,
    pub history: TrainHistory,
}

/// Applies `plan` to a fine-tuned model and retrains the result.
pub fn apply_plan<T: Real>(
    model: &QeModel<T>,
    plan: &CompressionPlan,
    splits: &Splits,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<Compressed<T>> {
    plan.validate(model.n_layers())?;
    match plan {
        CompressionPlan::LayerPrune { n_drop } => {
            let pruned = prune_layers(model.clone(), *n_drop)?;
            let (model, history) = train(pruned, splits, cfg, opt)?;
            Ok(Compressed { model, history })
        }
        CompressionPlan::TokenPrune { lambda, phases } => {
            let out = token_prune(model.clone(), *lambda, phases, splits, cfg, opt)?;
            Ok(Compressed {
                model: out.model,
                history: out.retrain,
            })
        }
        CompressionPlan::ModuleReplace { n_replace, distill } => {
            let (model, history) = replace_modules(model, *n_replace, splits, cfg, distill)?;
            Ok(Compressed { model, history })
        }
    }
}

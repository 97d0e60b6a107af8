use super::CompressionPlan;
use crate::error::Result;
use crate::model::QeModel;
use crate::tensor::Real;

/// Removes the top `n_drop` encoder layers. The remaining tensors are moved,
/// not copied or re-initialised; fine-tuning is the caller's next step.
pub fn prune_layers<T: Real>(mut model: QeModel<T>, n_drop: usize) -> Result<QeModel<T>> {
    let plan = CompressionPlan::LayerPrune { n_drop };
    plan.validate(model.n_layers())?;
    if n_drop == 0 {
        return Ok(model);
    }
    let keep = model.n_layers() - n_drop;
    model.layers.truncate(keep);
    model.config.n_layers = keep;
    if let Some(r) = model.retention.as_mut() {
        r.truncate(keep);
    }
    model.provenance.push(plan);
    Ok(model)
}

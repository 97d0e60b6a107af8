//! Plain-slice objectives and their gradients. The same quantities are
//! recorded on the tape during training; these are for reporting and checks.

use crate::error::{QeError, Result};
use crate::tensor::bce_term;

fn check(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b || a == 0 {
        return Err(QeError::shape(op, &[a], &[b]));
    }
    Ok(())
}

pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check(preds.len(), targets.len(), "mse_loss")?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// `∂/∂p_i = 2(p_i − t_i)/n`.
pub fn mse_loss_grad(preds: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check(preds.len(), targets.len(), "mse_loss")?;
    let n = preds.len() as f64;
    Ok(preds.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

/// Mean binary cross-entropy of logits against 0/1 labels, evaluated as
/// `max(z,0) − y·z + ln(1 + e^{−|z|})` so large logits cannot overflow.
pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    check(logits.len(), labels.len(), "bce_loss")?;
    Ok(logits.iter().zip(labels).map(|(&z, &y)| bce_term(z, y)).sum::<f64>() / logits.len() as f64)
}

/// `∂/∂z_i = (σ(z_i) − y_i)/n`.
pub fn bce_loss_grad(logits: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check(logits.len(), labels.len(), "bce_loss")?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| (crate::tensor::sigmoid(z) - y) / n)
        .collect())
}

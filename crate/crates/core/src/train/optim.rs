use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    /// The learning rate used for fine-tuning pretrained encoders.
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    /// Randomly initialised toy models need a far larger step.
    pub fn synthetic() -> Self {
        Self {
            learning_rate: 3e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0) || !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(QeError::Config(
                "optimizer needs learning_rate > 0 and betas in [0, 1)".into(),
            ));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(QeError::Config("optimizer needs eps > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Self { step: 0, m, v }
    }
}

/// One AdamW update. Parameters whose gradient is `None` are frozen and left
/// untouched (no decay either). Weight decay is decoupled: the parameter is
/// first shrunk by `1 − lr·wd`, then the bias-corrected Adam step applied.
pub fn adamw_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(QeError::shape("adamw_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let bc1 = T::one() - T::c(cfg.beta1.powi(t));
    let bc2 = T::one() - T::c(cfg.beta2.powi(t));
    let lr = T::c(cfg.learning_rate);
    let eps = T::c(cfg.eps);
    let shrink = T::c(1.0 - cfg.learning_rate * cfg.weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if g.len() != p.numel() {
            return Err(QeError::shape("adamw_step", p.shape(), &[g.len()]));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w *= shrink;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

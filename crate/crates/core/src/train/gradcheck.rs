//! Central finite-difference check of the analytic gradients of a whole model.

use super::Objective;
use crate::error::Result;
use crate::model::{Batch, ForwardOptions, QeModel};
use crate::tensor::{Real, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖)`; 0 for vanishing tensors.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    /// Both gradients are below [`VANISHING`], as for key biases (softmax is
    /// invariant to a per-query constant shift), so only rounding noise is left.
    pub vanishing: bool,
}

/// Gradient norm below which a tensor counts as having no gradient at all.
pub const VANISHING: f64 = 1e-8;

fn loss<T: Real>(model: &QeModel<T>, batch: &Batch, targets: &[T], objective: Objective) -> Result<(f64, Vec<Vec<T>>)> {
    let n = model.params().len();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &vec![true; n])?;
    let out = model.forward(&mut tape, &bound, batch, ForwardOptions::default())?;
    let l = match objective {
        Objective::Mse => tape.mse(out.output, targets)?,
        Objective::Bce => tape.bce_with_logits(out.output, targets)?,
    };
    let mut g = tape.backward(l)?;
    let grads = bound.vars.iter().map(|&v| g.take(v).expect("trainable leaf")).collect();
    Ok((tape.value(l)[0].to_f64().unwrap(), grads))
}

fn loss_value<T: Real>(model: &QeModel<T>, batch: &Batch, targets: &[T], objective: Objective) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let out = model.forward(&mut tape, &bound, batch, ForwardOptions::default())?;
    let l = match objective {
        Objective::Mse => tape.mse(out.output, targets)?,
        Objective::Bce => tape.bce_with_logits(out.output, targets)?,
    };
    Ok(tape.value(l)[0].to_f64().unwrap())
}

/// Compares every parameter's gradient with `(L(θ+h) − L(θ−h)) / 2h`,
/// perturbing one element at a time.
pub fn check_model_gradients<T: Real>(
    model: &QeModel<T>,
    batch: &Batch,
    targets: &[f64],
    objective: Objective,
    h: f64,
) -> Result<Vec<TensorCheck>> {
    let t: Vec<T> = targets.iter().map(|&v| T::c(v)).collect();
    let (_, analytic) = loss(model, batch, &t, objective)?;
    let names = model.param_names();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let numel = analytic[pi].len();
        let mut fd = vec![0.0; numel];
        for (j, slot) in fd.iter_mut().enumerate() {
            let orig = probe.params()[pi].data()[j];
            probe.params_mut()[pi].data_mut()[j] = orig + T::c(h);
            let up = loss_value(&probe, batch, &t, objective)?;
            probe.params_mut()[pi].data_mut()[j] = orig - T::c(h);
            let down = loss_value(&probe, batch, &t, objective)?;
            probe.params_mut()[pi].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let a: Vec<f64> = analytic[pi].iter().map(|v| v.to_f64().unwrap()).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&fd).map(|(x, y)| x - y).collect();
        let (na, nf) = (norm(&a), norm(&fd));
        let vanishing = na < VANISHING && nf < VANISHING;
        out.push(TensorCheck {
            name,
            rel_error: if vanishing { 0.0 } else { norm(&diff) / na.max(nf) },
            analytic_norm: na,
            fd_norm: nf,
            vanishing,
        });
    }
    Ok(out)
}

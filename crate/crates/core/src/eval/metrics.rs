use serde::{Deserialize, Serialize};

use crate::corpus::{binarize, Acceptability, NormStats, QualityThreshold};
use crate::error::{QeError, Result};

/// Pearson's r, accumulated in 64-bit with centred sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(QeError::shape("pearson", &[xs.len()], &[ys.len()]));
    }
    if xs.len() < 2 {
        return Err(QeError::UndefinedCorrelation(format!("needs at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(QeError::Numeric("non-finite value in correlation input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        let which = if sxx == 0.0 { "predictions" } else { "gold scores" };
        return Err(QeError::UndefinedCorrelation(format!("{which} have zero variance")));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// `true` is the positive ("acceptable") class.
    pub fn from_labels(preds: &[bool], golds: &[bool]) -> Result<Self> {
        if preds.len() != golds.len() || preds.is_empty() {
            return Err(QeError::shape("f1", &[preds.len()], &[golds.len()]));
        }
        let mut c = Self::default();
        for (&p, &g) in preds.iter().zip(golds) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> F1Score {
        match (self.precision(), self.recall()) {
            (Some(p), Some(r)) if p + r > 0.0 => F1Score {
                value: 2.0 * p * r / (p + r),
                degenerate: false,
            },
            _ => F1Score {
                value: 0.0,
                degenerate: true,
            },
        }
    }
}

/// F1 over the acceptable class. `degenerate` marks the cases where precision
/// or recall is undefined or both are zero; the value is then 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub value: f64,
    pub degenerate: bool,
}

pub fn f1(preds: &[bool], golds: &[bool]) -> Result<F1Score> {
    Ok(ConfusionCounts::from_labels(preds, golds)?.f1())
}

/// Maps a z-space prediction back to raw DA and applies the threshold.
pub fn regression_to_binary(
    z_pred: f64,
    stats: &NormStats,
    lang: &str,
    threshold: QualityThreshold,
) -> Result<Acceptability> {
    Ok(binarize(stats.inverse_z(lang, z_pred)?, threshold))
}

/// Decision rule of classification heads: probability ≥ 0.5, i.e. logit ≥ 0.
pub fn logit_to_binary(logit: f64) -> Acceptability {
    if logit >= 0.0 {
        Acceptability::Acceptable
    } else {
        Acceptability::NotAcceptable
    }
}

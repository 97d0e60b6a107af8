use serde::{Deserialize, Serialize};

/// Raw DA cutoff separating acceptable from not-acceptable translations.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityThreshold(pub f64);

impl QualityThreshold {
    pub const DEFAULTS: [QualityThreshold; 2] = [QualityThreshold(51.0), QualityThreshold(70.0)];

    pub fn value(self) -> f64 {
        self.0
    }

    /// Metric-name suffix, e.g. `51` or `62.5`.
    pub fn label(self) -> String {
        if self.0.fract() == 0.0 {
            format!("{}", self.0 as i64)
        } else {
            format!("{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceptability {
    Acceptable,
    NotAcceptable,
}

impl Acceptability {
    pub fn is_acceptable(self) -> bool {
        self == Acceptability::Acceptable
    }
}

/// Acceptable iff `da_mean >= threshold`.
pub fn binarize(da_mean: f64, threshold: QualityThreshold) -> Acceptability {
    if da_mean >= threshold.0 {
        Acceptability::Acceptable
    } else {
        Acceptability::NotAcceptable
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};

/// Budgets for the soft-extraction and hard-retraining phases of token pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenPrunePhases {
    pub soft_epochs: usize,
    /// Plain SGD step size for the mask values.
    pub mask_lr: f64,
    pub retrain_epochs: usize,
}

impl Default for TokenPrunePhases {
    fn default() -> Self {
        Self {
            soft_epochs: 2,
            mask_lr: 0.01,
            retrain_epochs: 3,
        }
    }
}

/// How the single student layer of module replacement starts out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInit {
    #[default]
    Random,
    /// Copy of the teacher's last layer (only meaningful for alignment checks).
    CopyTeacherLast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub init: TargetInit,
    /// Seed for the target layer's initialisation.
    pub init_seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            init: TargetInit::Random,
            init_seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "technique", rename_all = "kebab-case")]
pub enum CompressionPlan {
    LayerPrune {
        n_drop: usize,
    },
    TokenPrune {
        lambda: f64,
        #[serde(default)]
        phases: TokenPrunePhases,
    },
    ModuleReplace {
        n_replace: usize,
        #[serde(default)]
        distill: DistillConfig,
    },
}

impl CompressionPlan {
    pub fn technique(&self) -> &'static str {
        match self {
            CompressionPlan::LayerPrune { .. } => "layer-prune",
            CompressionPlan::TokenPrune { .. } => "token-prune",
            CompressionPlan::ModuleReplace { .. } => "module-replace",
        }
    }

    /// The swept quantity: N for the layer techniques, λ for token pruning.
    pub fn param(&self) -> f64 {
        match self {
            CompressionPlan::LayerPrune { n_drop } => *n_drop as f64,
            CompressionPlan::TokenPrune { lambda, .. } => *lambda,
            CompressionPlan::ModuleReplace { n_replace, .. } => *n_replace as f64,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        match self {
            CompressionPlan::LayerPrune { n_drop } if *n_drop >= n_layers => Err(QeError::Usage(format!(
                "cannot drop {n_drop} of {n_layers} encoder layers"
            ))),
            CompressionPlan::ModuleReplace { n_replace, .. } if *n_replace < 2 || *n_replace > n_layers => {
                Err(QeError::Usage(format!(
                    "n_replace must lie in 2..={n_layers}, got {n_replace}"
                )))
            }
            CompressionPlan::TokenPrune { lambda, .. } if !(*lambda >= 0.0) => {
                Err(QeError::Usage(format!("lambda must be non-negative, got {lambda}")))
            }
            _ => Ok(()),
        }
    }
}

/// Layer counts the paper sweeps for a 24-layer model.
pub const LAYER_PRUNE_PRESET_24: [usize; 8] = [3, 6, 9, 12, 15, 18, 21, 23];
pub const MODULE_REPLACE_PRESET_24: [usize; 6] = [2, 6, 12, 18, 23, 24];

fn scale_preset(preset: &[usize], n_layers: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut out: Vec<usize> = preset
        .iter()
        .map(|&n| ((n as f64 * n_layers as f64 / 24.0).round() as usize).clamp(lo, hi))
        .collect();
    out.dedup();
    out
}

/// The 24-layer drop counts rescaled to `n_layers`, clamped to `1..n_layers`.
pub fn layer_prune_preset(n_layers: usize) -> Vec<usize> {
    if n_layers < 2 {
        return Vec::new();
    }
    scale_preset(&LAYER_PRUNE_PRESET_24, n_layers, 1, n_layers - 1)
}

/// The 24-layer replacement counts rescaled to `n_layers`, clamped to `2..=n_layers`.
pub fn module_replace_preset(n_layers: usize) -> Vec<usize> {
    if n_layers < 2 {
        return Vec::new();
    }
    scale_preset(&MODULE_REPLACE_PRESET_24, n_layers, 2, n_layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_scale_to_toy_depth() {
        assert_eq!(layer_prune_preset(24), LAYER_PRUNE_PRESET_24.to_vec());
        assert_eq!(layer_prune_preset(4), vec![1, 2, 3]);
        assert_eq!(module_replace_preset(24), MODULE_REPLACE_PRESET_24.to_vec());
        assert_eq!(module_replace_preset(4), vec![2, 3, 4]);
        assert!(layer_prune_preset(1).is_empty());
    }

    #[test]
    fn plan_ranges() {
        assert!(CompressionPlan::LayerPrune { n_drop: 3 }.validate(4).is_ok());
        assert!(CompressionPlan::LayerPrune { n_drop: 4 }.validate(4).is_err());
        let mr = |n| CompressionPlan::ModuleReplace {
            n_replace: n,
            distill: DistillConfig::default(),
        };
        assert!(mr(1).validate(4).is_err());
        assert!(mr(4).validate(4).is_ok());
        assert!(mr(5).validate(4).is_err());
        let tp = CompressionPlan::TokenPrune {
            lambda: -1.0,
            phases: TokenPrunePhases::default(),
        };
        assert!(tp.validate(4).is_err());
    }

    #[test]
    fn plans_serialise_with_a_technique_tag() {
        let p = CompressionPlan::LayerPrune { n_drop: 2 };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"technique":"layer-prune","n_drop":2}"#);
        let back: CompressionPlan = serde_json::from_str(r#"{"technique":"token-prune","lambda":0.5}"#).unwrap();
        assert_eq!(back.param(), 0.5);
        assert_eq!(back.technique(), "token-prune");
    }
}

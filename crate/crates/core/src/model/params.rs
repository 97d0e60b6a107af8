use serde::{Deserialize, Serialize};

use super::{ModelConfig, QeModel};
use crate::tensor::Real;

/// Parameter counts per component, mirroring a Table-1 style breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub embedding: usize,
    pub per_encoder_layer: usize,
    pub n_layers: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamCounts {
    /// Closed form for a configuration; `n_layers = 0` is allowed here.
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let (v, p, d, f, hh) = (cfg.vocab_size, cfg.max_positions, cfg.d_model, cfg.d_ff, cfg.head_hidden);
        let embedding = v * d + p * d + 2 * d;
        let per_encoder_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        let head = d * hh + hh + hh + 1;
        Self {
            embedding,
            per_encoder_layer,
            n_layers: cfg.n_layers,
            head,
            total: embedding + cfg.n_layers * per_encoder_layer + head,
        }
    }
}

/// Counts the elements actually owned by each component of `model`.
pub fn count_params<T: Real>(model: &QeModel<T>) -> ParamCounts {
    let embedding = model.embeddings.tensors().iter().map(|t| t.numel()).sum();
    let layer_sizes: Vec<usize> = model.layers.iter().map(|l| l.numel()).collect();
    let head = model.head.tensors().iter().map(|t| t.numel()).sum();
    let encoder: usize = layer_sizes.iter().sum();
    ParamCounts {
        embedding,
        per_encoder_layer: layer_sizes.first().copied().unwrap_or_else(|| {
            ParamCounts::for_config(&model.config).per_encoder_layer
        }),
        n_layers: model.layers.len(),
        head,
        total: embedding + encoder + head,
    }
}

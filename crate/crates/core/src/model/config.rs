use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};
use crate::tensor::Precision;

/// What the scalar produced by the head means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// A z-space quality score.
    #[serde(alias = "reg")]
    Regression,
    /// A logit for "acceptable".
    #[serde(alias = "cls")]
    Classification,
}

impl HeadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadMode::Regression => "regression",
            HeadMode::Classification => "classification",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reg" | "regression" => Ok(HeadMode::Regression),
            "cls" | "classification" => Ok(HeadMode::Classification),
            other => Err(format!("unknown mode `{other}` (expected reg or cls)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub head_hidden: usize,
    pub head_mode: HeadMode,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of the normal weight initialisation.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_init_std() -> f64 {
    0.02
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// The 4-layer, 64-wide reference configuration.
    pub fn toy() -> Self {
        Self {
            vocab_size: 1000,
            max_positions: 128,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_layers: 4,
            head_hidden: 64,
            head_mode: HeadMode::Regression,
            precision: Precision::F32,
            seed: 0,
            init_std: default_init_std(),
            ln_eps: default_ln_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(QeError::Config(msg));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} leaves no room beyond the special tokens", self.vocab_size));
        }
        if self.max_positions < 3 {
            return fail("max_positions must fit [CLS] [SEP] [SEP]".into());
        }
        if self.d_ff == 0 || self.head_hidden == 0 {
            return fail("d_ff and head_hidden must be positive".into());
        }
        if !(self.init_std > 0.0) || !(self.ln_eps > 0.0) {
            return fail("init_std and ln_eps must be positive".into());
        }
        Ok(())
    }
}

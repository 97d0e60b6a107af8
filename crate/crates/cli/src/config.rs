use std::fs;
use std::path::{Path, PathBuf};

use qe_core::compress::{
    layer_prune_preset, module_replace_preset, CompressionPlan, DistillConfig, TokenPrunePhases,
};
use qe_core::experiment::{CorpusSource, ExperimentConfig};
use qe_core::model::ModelConfig;
use qe_core::{QeError, Result};
use serde_json::{json, Value};

use crate::{ExperimentArgs, PlanArgs, Technique};

fn object<'v>(v: &'v mut Value, what: &str) -> Result<&'v mut serde_json::Map<String, Value>> {
    v.as_object_mut()
        .ok_or_else(|| QeError::Config(format!("`{what}` must be a JSON object")))
}

fn section<'v>(root: &'v mut serde_json::Map<String, Value>, key: &str, default: Value) -> Result<&'v mut serde_json::Map<String, Value>> {
    object(root.entry(key).or_insert(default), key)
}

/// Reads the JSON config, applies flag overrides and validates the result.
pub fn load_experiment(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| QeError::io(&args.config, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| QeError::Config(format!("{}: {e}", args.config.display())))?;
    let root = object(&mut value, "config")?;
    if let Some(seed) = args.seed {
        root.insert("seeds".into(), json!([seed]));
    }
    if let Some(seeds) = &args.seeds {
        root.insert("seeds".into(), json!(seeds));
    }
    if let Some(t) = &args.thresholds {
        root.insert("thresholds".into(), json!(t));
    }
    if let Some(dir) = &args.out_dir {
        root.insert("out_dir".into(), json!(dir));
    }
    if let Some(mode) = args.mode {
        let mode = serde_json::to_value(mode)?;
        root.insert("mode".into(), mode.clone());
        if let Some(model) = root.get_mut("model").and_then(Value::as_object_mut) {
            model.insert("head_mode".into(), mode);
        }
    }
    if let Some(p) = args.precision {
        let mut toy = serde_json::to_value(ModelConfig::toy())?;
        if let Some(mode) = root.get("mode") {
            toy["head_mode"] = mode.clone();
        }
        section(root, "model", toy)?.insert("precision".into(), serde_json::to_value(p)?);
    }
    if let Some(t) = args.threshold {
        section(root, "train", json!({}))?.insert("threshold".into(), json!(t));
    }
    let mut cfg = ExperimentConfig::from_value(value).map_err(|e| match e {
        QeError::Config(msg) => QeError::Config(format!("{}: {msg}", args.config.display())),
        other => other,
    })?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    if let CorpusSource::Tsv { train, dev, test, .. } = &mut cfg.corpus {
        for p in [train, dev, test] {
            if p.is_relative() {
                *p = std::path::absolute(base.join(&*p)).map_err(|e| QeError::io(&*p, e))?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Plans from the flags, or the config's own when no plan flag is given.
pub fn resolve_plans(args: &PlanArgs, cfg: &ExperimentConfig) -> Result<Vec<CompressionPlan>> {
    let inferred = match (args.drops.is_some(), args.lambdas.is_some(), args.replace.is_some()) {
        (false, false, false) => None,
        (true, false, false) => Some(Technique::LayerPrune),
        (false, true, false) => Some(Technique::TokenPrune),
        (false, false, true) => Some(Technique::ModuleReplace),
        _ => return Err(QeError::Usage("give levels for one technique only".into())),
    };
    let technique = match (args.technique, inferred) {
        (Some(t), Some(i)) if t != i => {
            return Err(QeError::Usage(format!("levels do not belong to technique {t:?}")))
        }
        (t, i) => t.or(i),
    };
    let Some(technique) = technique else {
        if args.preset {
            return Err(QeError::Usage("--preset needs --technique".into()));
        }
        return Ok(cfg.plans.clone());
    };
    let depth = cfg.model.n_layers;
    let plans: Vec<CompressionPlan> = match technique {
        Technique::LayerPrune => {
            let levels = match &args.drops {
                Some(d) => d.clone(),
                None if args.preset => layer_prune_preset(depth),
                None => return Err(QeError::Usage("layer-prune needs --drops or --preset".into())),
            };
            levels.into_iter().map(|n_drop| CompressionPlan::LayerPrune { n_drop }).collect()
        }
        Technique::TokenPrune => {
            let levels = args
                .lambdas
                .clone()
                .ok_or_else(|| QeError::Usage("token-prune needs --lambdas".into()))?;
            levels
                .into_iter()
                .map(|lambda| CompressionPlan::TokenPrune {
                    lambda,
                    phases: TokenPrunePhases::default(),
                })
                .collect()
        }
        Technique::ModuleReplace => {
            let levels = match &args.replace {
                Some(r) => r.clone(),
                None if args.preset => module_replace_preset(depth),
                None => return Err(QeError::Usage("module-replace needs --replace or --preset".into())),
            };
            levels
                .into_iter()
                .map(|n_replace| CompressionPlan::ModuleReplace {
                    n_replace,
                    distill: DistillConfig::default(),
                })
                .collect()
        }
    };
    for p in &plans {
        p.validate(depth)?;
    }
    Ok(plans)
}

pub fn plan_dir(plan: &CompressionPlan) -> String {
    format!("{}-{}", plan.technique(), plan.param())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| QeError::io(path, e))
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    qe_core::write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

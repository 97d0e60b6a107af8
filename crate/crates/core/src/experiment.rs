//! Experiment description and the drivers shared by the command line and
//! the acceptance harness: baselines, compression sweeps and the
//! multilingual-versus-bilingual comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{profile_latency, DEFAULT_REPS, DEFAULT_WARMUP};
use crate::compress::{apply_plan, CompressionPlan, Compressed};
use crate::corpus::{
    build_vocab, concat_multilingual, load_mlqepe_tsv, synthesize_corpus, ColumnMap, QualityThreshold, Splits,
    SynthSpec,
};
use crate::error::{QeError, Result};
use crate::eval::{evaluate_model, EvalReport, SweepPoint};
use crate::model::{HeadMode, ModelConfig, QeModel};
use crate::tensor::Real;
use crate::train::{train, Objective, OptimizerConfig, TrainConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorpusSource {
    /// `languages` disjoint synthetic directions derived from `spec`.
    Synth {
        #[serde(default)]
        spec: SynthSpec,
        #[serde(default = "one")]
        languages: usize,
    },
    Tsv {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
        #[serde(default)]
        columns: ColumnMap,
        #[serde(default = "default_lang")]
        default_lang: String,
    },
}

fn one() -> usize {
    1
}

fn default_lang() -> String {
    "xx-xx".into()
}

impl CorpusSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            CorpusSource::Synth { spec, languages } => {
                if *languages == 0 {
                    return Err(QeError::Config("corpus.languages must be at least 1".into()));
                }
                spec.validate()
            }
            CorpusSource::Tsv { train, dev, test, .. } => {
                for p in [train, dev, test] {
                    if !p.is_file() {
                        return Err(QeError::Config(format!("corpus file {} does not exist", p.display())));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn load(&self) -> Result<Splits> {
        match self {
            CorpusSource::Synth { spec, languages: 1 } => synthesize_corpus(spec),
            CorpusSource::Synth { spec, languages } => {
                let parts = spec
                    .languages(*languages)
                    .iter()
                    .map(synthesize_corpus)
                    .collect::<Result<Vec<_>>>()?;
                concat_multilingual(parts, spec.seed)
            }
            CorpusSource::Tsv {
                train,
                dev,
                test,
                columns,
                default_lang,
            } => Ok(Splits {
                train: load_mlqepe_tsv(train, columns, default_lang)?,
                dev: load_mlqepe_tsv(dev, columns, default_lang)?,
                test: load_mlqepe_tsv(test, columns, default_lang)?,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bilingual,
    Multilingual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub warmup: usize,
    pub reps: usize,
    /// Test pairs profiled per repetition.
    pub n_pairs: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            reps: DEFAULT_REPS,
            n_pairs: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub seeds: Vec<u64>,
    #[serde(default = "ModelConfig::toy")]
    pub model: ModelConfig,
    /// `objective` and `seed` are overridden from `mode` and each run's seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "OptimizerConfig::synthetic")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_mode")]
    pub mode: HeadMode,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<QualityThreshold>,
    #[serde(default)]
    pub plans: Vec<CompressionPlan>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub bench: BenchSettings,
}

fn default_mode() -> HeadMode {
    HeadMode::Regression
}

fn default_regime() -> Regime {
    Regime::Bilingual
}

fn default_thresholds() -> Vec<QualityThreshold> {
    vec![QualityThreshold(51.0), QualityThreshold(70.0)]
}

fn default_out_dir() -> PathBuf {
    "runs".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value = serde_json::from_str(text).map_err(|e| QeError::Config(e.to_string()))?;
        Self::from_value(value)
    }

    /// A model section without `head_mode` inherits the top-level `mode`.
    pub fn from_value(mut value: serde_json::Value) -> Result<Self> {
        if let Some(mode) = value.get("mode").cloned() {
            if let Some(model) = value.get_mut("model").and_then(|m| m.as_object_mut()) {
                model.entry("head_mode").or_insert(mode);
            } else if let Some(obj) = value.as_object_mut() {
                let mut model = serde_json::to_value(ModelConfig::toy())?;
                model["head_mode"] = mode;
                obj.insert("model".into(), model);
            }
        }
        serde_json::from_value(value).map_err(|e| QeError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(QeError::Config("seeds must not be empty".into()));
        }
        if self.thresholds.is_empty() {
            return Err(QeError::Config("thresholds must not be empty".into()));
        }
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.optimizer.validate()?;
        if self.model.head_mode != self.mode {
            return Err(QeError::Config(format!(
                "mode is {} but model.head_mode is {}",
                self.mode.as_str(),
                self.model.head_mode.as_str()
            )));
        }
        for plan in &self.plans {
            plan.validate(self.model.n_layers)?;
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            objective: Objective::for_mode(self.mode),
            ..self.train.clone()
        }
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            seed,
            ..self.model.clone()
        }
    }
}

/// A trained, evaluated and profiled model.
#[derive(Clone, Debug)]
pub struct Run<T> {
    pub seed: u64,
    pub model: QeModel<T>,
    pub history: TrainHistory,
    pub report: EvalReport,
    /// Mean per-sentence latency at batch size 1.
    pub latency_ms: f64,
}

fn measure<T: Real>(model: &QeModel<T>, splits: &Splits, cfg: &ExperimentConfig) -> Result<(EvalReport, f64)> {
    let report = evaluate_model(model, &splits.test, &cfg.thresholds, cfg.train.eval_batch_size)?;
    let n = cfg.bench.n_pairs.min(splits.test.len());
    let inputs = model.encode_pairs(&splits.test[..n]);
    let bench = profile_latency(model, &inputs, cfg.bench.warmup, cfg.bench.reps)?;
    Ok((report, bench.total.latency_ms_mean))
}

pub fn train_baseline<T: Real>(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<Run<T>> {
    let vocab = build_vocab(&splits.train, cfg.model.vocab_size);
    let model = QeModel::<T>::new(cfg.model_config(seed), vocab)?;
    let (model, history) = train(model, splits, &cfg.train_config(seed), &cfg.optimizer)?;
    let (report, latency_ms) = measure(&model, splits, cfg)?;
    Ok(Run {
        seed,
        model,
        history,
        report,
        latency_ms,
    })
}

pub fn compress_run<T: Real>(
    cfg: &ExperimentConfig,
    splits: &Splits,
    base: &Run<T>,
    plan: &CompressionPlan,
) -> Result<Run<T>> {
    let Compressed { model, history } = apply_plan(&base.model, plan, splits, &cfg.train_config(base.seed), &cfg.optimizer)?;
    let (report, latency_ms) = measure(&model, splits, cfg)?;
    Ok(Run {
        seed: base.seed,
        model,
        history,
        report,
        latency_ms,
    })
}

pub fn baseline_point<T>(base: &Run<T>) -> Result<SweepPoint> {
    SweepPoint::compare(
        "baseline",
        0.0,
        base.seed,
        (&base.report, base.latency_ms),
        (&base.report, base.latency_ms),
    )
}

pub fn sweep_point<T>(base: &Run<T>, plan: &CompressionPlan, comp: &Run<T>) -> Result<SweepPoint> {
    SweepPoint::compare(
        plan.technique(),
        plan.param(),
        base.seed,
        (&base.report, base.latency_ms),
        (&comp.report, comp.latency_ms),
    )
}

/// Baseline row plus one row per plan for a single seed. `on_run` sees
/// every trained model (baseline first) so callers can persist them.
pub fn sweep_seed<T: Real>(
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    mut on_run: impl FnMut(Option<&CompressionPlan>, &Run<T>) -> Result<()>,
) -> Result<Vec<SweepPoint>> {
    let base = train_baseline::<T>(cfg, splits, seed)?;
    on_run(None, &base)?;
    let mut points = vec![baseline_point(&base)?];
    for plan in &cfg.plans {
        log::info!("seed {seed}: {}", plan_label(Some(plan)));
        let comp = compress_run(cfg, splits, &base, plan)?;
        on_run(Some(plan), &comp)?;
        points.push(sweep_point(&base, plan, &comp)?);
    }
    Ok(points)
}

/// `plans × seeds` compressed models, each against its own seed's baseline.
pub fn sweep<T: Real>(cfg: &ExperimentConfig, splits: &Splits) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        points.extend(sweep_seed::<T>(cfg, splits, seed, |_, _| Ok(()))?);
    }
    Ok(points)
}

pub fn plan_label(plan: Option<&CompressionPlan>) -> String {
    match plan {
        None => "none".into(),
        Some(p) => format!("{}:{}", p.technique(), p.param()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: String,
    pub lang: String,
    pub plan: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

fn regime_rows(regime: &str, plan: &str, seed: u64, report: &EvalReport, only: Option<&str>) -> Vec<RegimeRow> {
    report
        .per_lang
        .iter()
        .filter(|(lang, _)| only.is_none_or(|o| o == lang.as_str()))
        .flat_map(|(lang, table)| {
            table.iter().map(move |(metric, s)| RegimeRow {
                regime: regime.into(),
                lang: lang.clone(),
                plan: plan.into(),
                metric: metric.clone(),
                value: s.mean,
                seed,
            })
        })
        .collect()
}

/// One multilingual model on the concatenated corpus and one bilingual model
/// per direction, each uncompressed and under every plan. Multilingual scores
/// are broken down by direction, each on that direction's test pairs only.
pub fn compare_regimes<T: Real>(cfg: &ExperimentConfig, splits: &Splits) -> Result<Vec<RegimeRow>> {
    let langs = splits.languages();
    if langs.len() < 2 {
        return Err(QeError::Degenerate(format!(
            "regime comparison needs at least two language directions, found {}",
            langs.len()
        )));
    }
    let mut rows = Vec::new();
    let plans: Vec<Option<&CompressionPlan>> = std::iter::once(None).chain(cfg.plans.iter().map(Some)).collect();
    for &seed in &cfg.seeds {
        let mut runs: Vec<(&str, Option<&str>, Splits)> = vec![("ML", None, splits.clone())];
        for lang in &langs {
            runs.push(("BL", Some(lang.as_str()), splits.filter_lang(lang)));
        }
        for (regime, only, data) in &runs {
            log::info!("seed {seed}: {regime} {}", only.unwrap_or("all"));
            let base = train_baseline::<T>(cfg, data, seed)?;
            for plan in &plans {
                let label = plan_label(*plan);
                let report = match plan {
                    None => base.report.clone(),
                    Some(p) => compress_run(cfg, data, &base, p)?.report,
                };
                rows.extend(regime_rows(regime, &label, seed, &report, *only));
            }
        }
    }
    Ok(rows)
}

/// ML and BL mean over seeds for one `(lang, plan, metric)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCell {
    pub lang: String,
    pub plan: String,
    pub metric: String,
    pub ml: f64,
    pub bl: f64,
}

pub fn summarize_regimes(rows: &[RegimeRow]) -> Vec<RegimeCell> {
    let mut acc: BTreeMap<(String, String, String), [(f64, usize); 2]> = BTreeMap::new();
    for r in rows {
        let slot = if r.regime == "ML" { 0 } else { 1 };
        let e = acc.entry((r.lang.clone(), r.plan.clone(), r.metric.clone())).or_default();
        e[slot].0 += r.value;
        e[slot].1 += 1;
    }
    acc.into_iter()
        .filter(|(_, v)| v[0].1 > 0 && v[1].1 > 0)
        .map(|((lang, plan, metric), v)| RegimeCell {
            lang,
            plan,
            metric,
            ml: v[0].0 / v[0].1 as f64,
            bl: v[1].0 / v[1].1 as f64,
        })
        .collect()
}

pub fn write_regime_csv(rows: &[RegimeRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(crate::eval::csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| QeError::Numeric(e.to_string()))?;
    crate::write_atomic(path, &bytes)
}

pub fn read_regime_csv(path: &Path) -> Result<Vec<RegimeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(crate::eval::csv_err)?;
    r.deserialize().map(|row| row.map_err(crate::eval::csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_is_named() {
        let err = ExperimentConfig::from_json(r#"{"seeds": [1]}"#).unwrap_err();
        assert!(err.to_string().contains("`corpus`"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"corpus": {"kind": "synth"}, "seeds": [1], "epochs": 3}"#).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn minimal_config() {
        let cls = ExperimentConfig::from_json(r#"{"corpus": {"kind": "synth"}, "seeds": [1], "mode": "cls"}"#).unwrap();
        assert_eq!(cls.model.head_mode, HeadMode::Classification);
        cls.validate().unwrap();
        let cfg = ExperimentConfig::from_json(r#"{"corpus": {"kind": "synth"}, "seeds": [1, 2]}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model, ModelConfig::toy());
        assert_eq!(cfg.thresholds.len(), 2);
        assert_eq!(cfg.train_config(2).seed, 2);
        let mut bad = cfg.clone();
        bad.seeds.clear();
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.mode = HeadMode::Classification;
        assert!(bad.validate().is_err());
        bad = cfg;
        bad.corpus = CorpusSource::Tsv {
            train: "/nonexistent/train.tsv".into(),
            dev: "/nonexistent/dev.tsv".into(),
            test: "/nonexistent/test.tsv".into(),
            columns: ColumnMap::default(),
            default_lang: default_lang(),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn regime_summary_pairs_ml_with_bl() {
        let row = |regime: &str, lang: &str, value| RegimeRow {
            regime: regime.into(),
            lang: lang.into(),
            plan: "none".into(),
            metric: "pearson".into(),
            value,
            seed: 1,
        };
        let rows = [row("ML", "a", 0.5), row("ML", "a", 0.7), row("BL", "a", 0.8), row("ML", "b", 0.1)];
        let cells = summarize_regimes(&rows);
        assert_eq!(cells.len(), 1);
        assert!((cells[0].ml - 0.6).abs() < 1e-12);
        assert_eq!(cells[0].bl, 0.8);
    }
}

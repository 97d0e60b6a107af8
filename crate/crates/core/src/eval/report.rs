use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{f1, logit_to_binary, pearson, regression_to_binary};
use crate::corpus::{binarize, QualityThreshold, SentencePair};
use crate::error::{QeError, Result};
use crate::model::{HeadMode, QeModel};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub std: f64,
}

impl Summary {
    fn single(v: f64) -> Self {
        Self { mean: v, std: 0.0 }
    }
}

/// Metric name (`pearson`, `f1_51`, …) to its summary.
pub type MetricTable = BTreeMap<String, Summary>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_runs: usize,
    pub n_pairs: usize,
    /// Metrics over the whole test set.
    pub overall: MetricTable,
    pub per_lang: BTreeMap<String, MetricTable>,
    /// Unweighted mean of the per-language values.
    pub lang_average: MetricTable,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.overall.get(name).map(|s| s.mean)
    }

    pub fn pearson(&self) -> Option<f64> {
        self.metric("pearson")
    }

    pub fn f1_at(&self, threshold: QualityThreshold) -> Option<f64> {
        self.metric(&f1_name(threshold))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

pub fn f1_name(threshold: QualityThreshold) -> String {
    format!("f1_{}", threshold.label())
}

/// One test pair's prediction next to its gold label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub lang_pair: String,
    pub gold_da: f64,
    /// Raw model output: a z-score or a logit.
    pub pred: f64,
    /// Prediction on the DA scale (regression heads only).
    pub pred_da: Option<f64>,
    pub gold_acceptable: bool,
    pub pred_acceptable: bool,
}

fn metrics_for<T: Real>(
    model: &QeModel<T>,
    pairs: &[SentencePair],
    preds: &[f64],
    thresholds: &[QualityThreshold],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    match model.mode() {
        HeadMode::Regression => {
            let gold: Vec<f64> = pairs
                .iter()
                .map(|p| model.norm_stats.to_z(&p.lang_pair, p.da_mean))
                .collect::<Result<_>>()?;
            out.insert("pearson".to_string(), pearson(preds, &gold)?);
            for &t in thresholds {
                let mut p_lab = Vec::with_capacity(pairs.len());
                for (p, &z) in pairs.iter().zip(preds) {
                    p_lab.push(regression_to_binary(z, &model.norm_stats, &p.lang_pair, t)?.is_acceptable());
                }
                let g_lab: Vec<bool> = pairs.iter().map(|p| binarize(p.da_mean, t).is_acceptable()).collect();
                out.insert(f1_name(t), f1(&p_lab, &g_lab)?.value);
            }
        }
        HeadMode::Classification => {
            // A classification head only knows the boundary it was trained on.
            let t = model
                .label_threshold
                .ok_or_else(|| QeError::Config("classification model has no label threshold".into()))?;
            let p_lab: Vec<bool> = preds.iter().map(|&l| logit_to_binary(l).is_acceptable()).collect();
            let g_lab: Vec<bool> = pairs.iter().map(|p| binarize(p.da_mean, t).is_acceptable()).collect();
            out.insert(f1_name(t), f1(&p_lab, &g_lab)?.value);
        }
    }
    Ok(out)
}

/// Single-run report with per-language breakdown. Regression outputs are
/// mapped back to the DA scale with the model's training statistics before
/// thresholding; classification logits are cut at 0.
pub fn evaluate_model<T: Real>(
    model: &QeModel<T>,
    pairs: &[SentencePair],
    thresholds: &[QualityThreshold],
    batch_size: usize,
) -> Result<EvalReport> {
    let preds = model.predict_pairs(pairs, batch_size)?;
    evaluate_predictions(model, pairs, &preds, thresholds)
}

pub fn evaluate_predictions<T: Real>(
    model: &QeModel<T>,
    pairs: &[SentencePair],
    preds: &[f64],
    thresholds: &[QualityThreshold],
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(QeError::Degenerate("empty test set".into()));
    }
    if preds.len() != pairs.len() {
        return Err(QeError::shape("evaluate", &[preds.len()], &[pairs.len()]));
    }
    let overall = metrics_for(model, pairs, preds, thresholds)?;
    let mut by_lang: BTreeMap<&str, (Vec<SentencePair>, Vec<f64>)> = BTreeMap::new();
    for (p, &y) in pairs.iter().zip(preds) {
        let e = by_lang.entry(&p.lang_pair).or_default();
        e.0.push(p.clone());
        e.1.push(y);
    }
    let mut per_lang = BTreeMap::new();
    for (lang, (ps, ys)) in &by_lang {
        let m = metrics_for(model, ps, ys, thresholds)?;
        per_lang.insert(lang.to_string(), m.into_iter().map(|(k, v)| (k, Summary::single(v))).collect());
    }
    let lang_average = average_over_langs(&per_lang);
    Ok(EvalReport {
        n_runs: 1,
        n_pairs: pairs.len(),
        overall: overall.into_iter().map(|(k, v)| (k, Summary::single(v))).collect(),
        per_lang,
        lang_average,
    })
}

fn average_over_langs(per_lang: &BTreeMap<String, MetricTable>) -> MetricTable {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for table in per_lang.values() {
        for (k, s) in table {
            let e = sums.entry(k.clone()).or_default();
            e.0 += s.mean;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, Summary::single(s / n as f64))).collect()
}

pub fn sample_dump<T: Real>(
    model: &QeModel<T>,
    pairs: &[SentencePair],
    threshold: QualityThreshold,
    batch_size: usize,
) -> Result<Vec<SampleRecord>> {
    let preds = model.predict_pairs(pairs, batch_size)?;
    pairs
        .iter()
        .zip(preds)
        .map(|(p, y)| {
            let (pred_da, pred_acceptable) = match model.mode() {
                HeadMode::Regression => {
                    let raw = model.norm_stats.inverse_z(&p.lang_pair, y)?;
                    (Some(raw), binarize(raw, threshold).is_acceptable())
                }
                HeadMode::Classification => (None, logit_to_binary(y).is_acceptable()),
            };
            Ok(SampleRecord {
                lang_pair: p.lang_pair.clone(),
                gold_da: p.da_mean,
                pred: y,
                pred_da,
                gold_acceptable: binarize(p.da_mean, threshold).is_acceptable(),
                pred_acceptable,
            })
        })
        .collect()
}

fn mean_std(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Summary { mean, std }
}

fn aggregate_table(tables: &[&MetricTable], what: &str) -> Result<MetricTable> {
    let keys: Vec<&String> = tables[0].keys().collect();
    let mut out = MetricTable::new();
    for t in tables {
        if t.keys().collect::<Vec<_>>() != keys {
            return Err(QeError::Degenerate(format!("runs report different metrics for {what}")));
        }
    }
    for k in keys {
        let vals: Vec<f64> = tables.iter().map(|t| t[k].mean).collect();
        out.insert(k.clone(), mean_std(&vals));
    }
    Ok(out)
}

/// Mean and sample standard deviation of each metric across single-run reports.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| QeError::Degenerate("no runs to aggregate".into()))?;
    let langs: Vec<&String> = first.per_lang.keys().collect();
    if reports.iter().any(|r| r.per_lang.keys().collect::<Vec<_>>() != langs) {
        return Err(QeError::Degenerate("runs cover different language directions".into()));
    }
    let overall = aggregate_table(&reports.iter().map(|r| &r.overall).collect::<Vec<_>>(), "the test set")?;
    let mut per_lang = BTreeMap::new();
    for lang in langs {
        let tables: Vec<&MetricTable> = reports.iter().map(|r| &r.per_lang[lang]).collect();
        per_lang.insert(lang.clone(), aggregate_table(&tables, lang)?);
    }
    let lang_average = aggregate_table(&reports.iter().map(|r| &r.lang_average).collect::<Vec<_>>(), "the language average")?;
    Ok(EvalReport {
        n_runs: reports.iter().map(|r| r.n_runs).sum(),
        n_pairs: first.n_pairs,
        overall,
        per_lang,
        lang_average,
    })
}

/// Relative drop in percent; an improvement comes out negative.
pub fn degradation_pct(orig: f64, comp: f64) -> Result<f64> {
    if orig == 0.0 || !orig.is_finite() {
        return Err(QeError::Usage(format!("degradation relative to a metric of {orig}")));
    }
    Ok(100.0 * (orig - comp) / orig)
}

pub fn speedup(orig_latency: f64, comp_latency: f64) -> Result<f64> {
    if !(orig_latency > 0.0 && comp_latency > 0.0) {
        return Err(QeError::Usage(format!(
            "latencies must be positive, got {orig_latency} and {comp_latency}"
        )));
    }
    Ok(orig_latency / comp_latency)
}

/// `(metric, latency)` of the original and the compressed model to
/// `(speedup, degradation %)`.
pub fn degradation_and_speedup(orig: (f64, f64), comp: (f64, f64)) -> Result<(f64, f64)> {
    Ok((speedup(orig.1, comp.1)?, degradation_pct(orig.0, comp.0)?))
}

/// One compressed model of a sweep, relative to its uncompressed original.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub technique: String,
    pub plan_param: f64,
    pub seed: u64,
    pub speedup: f64,
    pub pearson: Option<f64>,
    pub f1_51: Option<f64>,
    pub f1_70: Option<f64>,
    pub degradation_pearson_pct: Option<f64>,
    pub degradation_f1_51_pct: Option<f64>,
    pub degradation_f1_70_pct: Option<f64>,
}

impl SweepPoint {
    /// `base` and `comp` are `(report, per-sentence latency)`.
    pub fn compare(
        technique: &str,
        plan_param: f64,
        seed: u64,
        base: (&EvalReport, f64),
        comp: (&EvalReport, f64),
    ) -> Result<Self> {
        let pair = |name: &str| -> Result<(Option<f64>, Option<f64>)> {
            match (base.0.metric(name), comp.0.metric(name)) {
                // A zero baseline (e.g. F1 of a model that never predicts the
                // positive class) leaves the relative drop undefined.
                (Some(o), Some(c)) if o != 0.0 => Ok((Some(c), Some(degradation_pct(o, c)?))),
                (_, c) => Ok((c, None)),
            }
        };
        let (pearson, degradation_pearson_pct) = pair("pearson")?;
        let (f1_51, degradation_f1_51_pct) = pair("f1_51")?;
        let (f1_70, degradation_f1_70_pct) = pair("f1_70")?;
        Ok(Self {
            technique: technique.to_string(),
            plan_param,
            seed,
            speedup: speedup(base.1, comp.1)?,
            pearson,
            f1_51,
            f1_70,
            degradation_pearson_pct,
            degradation_f1_51_pct,
            degradation_f1_70_pct,
        })
    }
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| QeError::Numeric(e.to_string()))?;
    crate::write_atomic(path, &bytes)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> QeError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => QeError::io("csv", io),
        other => QeError::Data {
            line,
            msg: format!("{other:?}"),
        },
    }
}

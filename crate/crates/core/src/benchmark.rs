//! Per-component parameter counts and batch-size-1 inference latency.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{QeError, Result};
use crate::eval::csv_err;
use crate::model::{count_params, Batch, EncodedInput, ForwardOptions, QeModel, SectionTimes};
use crate::tensor::{Precision, Real, Tape};

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_REPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub module: String,
    pub params: usize,
    pub latency_ms_mean: f64,
    pub latency_ms_median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub precision: Precision,
    pub warmup: usize,
    pub reps: usize,
    pub n_pairs: usize,
    pub threads: usize,
    pub host: String,
}

/// Latencies are per sentence pair, averaged over the profiled pairs within
/// a repetition; mean and median are then taken over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_layers: usize,
    pub embedding: BenchRow,
    /// Mean over encoder layers.
    pub encoder_per_layer: BenchRow,
    pub head: BenchRow,
    pub total: BenchRow,
    /// Mean per-pair time of each encoder layer.
    pub layer_ms_mean: Vec<f64>,
    /// Mean per-pair time of the whole encoder stack.
    pub encoder_ms_mean: f64,
    /// Fraction of total latency spent in encoder layers.
    pub encoder_share: f64,
    pub environment: BenchEnvironment,
}

impl BenchReport {
    pub fn rows(&self) -> [&BenchRow; 4] {
        [&self.embedding, &self.encoder_per_layer, &self.head, &self.total]
    }

    /// Sum of the instrumented sections, per pair.
    pub fn component_ms_mean(&self) -> f64 {
        self.embedding.latency_ms_mean + self.encoder_ms_mean + self.head.latency_ms_mean
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn host_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{} {} / {cpu}", std::env::consts::OS, std::env::consts::ARCH)
}

fn timed_forward<T: Real>(model: &QeModel<T>, x: &EncodedInput, sections: &mut SectionTimes) -> Result<Duration> {
    let started = Instant::now();
    let batch = Batch::single(x);
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let out = model.forward(
        &mut tape,
        &bound,
        &batch,
        ForwardOptions {
            timer: Some(sections),
            ..Default::default()
        },
    )?;
    let y = tape.value(out.output)[0];
    let elapsed = started.elapsed();
    if !y.is_finite() {
        return Err(QeError::Numeric("non-finite prediction while profiling".into()));
    }
    Ok(elapsed)
}

/// Runs every pair once per repetition at batch size 1, discarding `warmup`
/// repetitions. Kernels are single-threaded, so the run is too.
pub fn profile_latency<T: Real>(
    model: &QeModel<T>,
    inputs: &[EncodedInput],
    warmup: usize,
    reps: usize,
) -> Result<BenchReport> {
    if inputs.is_empty() {
        return Err(QeError::Degenerate("no pairs to profile".into()));
    }
    if warmup < 1 || reps < 10 {
        return Err(QeError::Usage(format!(
            "profiling needs warmup >= 1 and reps >= 10 (got {warmup}, {reps})"
        )));
    }
    let n_layers = model.n_layers();
    let n = inputs.len() as f64;
    let ms = |d: Duration| d.as_secs_f64() * 1e3 / n;
    let mut emb = Vec::with_capacity(reps);
    let mut layer = vec![Vec::with_capacity(reps); n_layers];
    let mut head = Vec::with_capacity(reps);
    let mut total = Vec::with_capacity(reps);
    for rep in 0..warmup + reps {
        let mut sections = SectionTimes::default();
        let mut wall = Duration::ZERO;
        for x in inputs {
            wall += timed_forward(model, x, &mut sections)?;
        }
        if rep < warmup {
            continue;
        }
        emb.push(ms(sections.embedding));
        for (acc, d) in layer.iter_mut().zip(&sections.layers) {
            acc.push(ms(*d));
        }
        head.push(ms(sections.head));
        total.push(ms(wall));
    }
    let per_layer_rep: Vec<f64> = (0..reps)
        .map(|r| layer.iter().map(|l| l[r]).sum::<f64>() / n_layers.max(1) as f64)
        .collect();
    let layer_ms_mean: Vec<f64> = layer.iter().map(|l| mean(l)).collect();
    let encoder_ms_mean: f64 = layer_ms_mean.iter().sum();
    let counts = count_params(model);
    let row = |module: &str, params: usize, xs: &[f64]| BenchRow {
        module: module.into(),
        params,
        latency_ms_mean: mean(xs),
        latency_ms_median: median(xs),
    };
    let total_row = row("total", counts.total, &total);
    let encoder_share = (encoder_ms_mean / total_row.latency_ms_mean).clamp(0.0, 1.0);
    Ok(BenchReport {
        n_layers,
        embedding: row("embedding", counts.embedding, &emb),
        encoder_per_layer: row("encoder-per-layer", counts.per_encoder_layer, &per_layer_rep),
        head: row("head", counts.head, &head),
        total: total_row,
        layer_ms_mean,
        encoder_ms_mean,
        encoder_share,
        environment: BenchEnvironment {
            precision: T::PRECISION,
            warmup,
            reps,
            n_pairs: inputs.len(),
            threads: 1,
            host: host_descriptor(),
        },
    })
}

/// Aligned text table and CSV with the same rows.
pub fn emit_table(report: &BenchReport) -> Result<(String, String)> {
    let mut text = format!(
        "{:<18} {:>10} {:>16} {:>18}\n",
        "module", "params", "latency_ms_mean", "latency_ms_median"
    );
    for r in report.rows() {
        let _ = writeln!(
            text,
            "{:<18} {:>10} {:>16.4} {:>18.4}",
            r.module, r.params, r.latency_ms_mean, r.latency_ms_median
        );
    }
    let env = &report.environment;
    let _ = writeln!(
        text,
        "# {} layers, {}, warmup {}, reps {}, {} pairs, {} thread(s), encoder share {:.3}, host {}",
        report.n_layers,
        env.precision.as_str(),
        env.warmup,
        env.reps,
        env.n_pairs,
        env.threads,
        report.encoder_share,
        env.host
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in report.rows() {
        w.serialize(r).map_err(csv_err)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| QeError::Numeric(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok((text, csv))
}

pub fn parse_table_csv(csv: &str) -> Result<Vec<BenchRow>> {
    csv::Reader::from_reader(csv.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use crate::model::{encode_pair, ModelConfig};

    fn inputs() -> Vec<EncodedInput> {
        (0..4).map(|i| encode_pair(&[5 + i, 6, 7, 8, 9], &[10, 11, 12, 13 + i], 128)).collect()
    }

    #[test]
    fn toy_table() {
        let m = QeModel::<f32>::new(ModelConfig::toy(), Vocab::build([], 1000)).unwrap();
        let rep = profile_latency(&m, &inputs(), 1, 10).unwrap();
        let (text, csv) = emit_table(&rep).unwrap();
        assert_eq!(text.lines().count(), 6);
        let rows = parse_table_csv(&csv).unwrap();
        let modules: Vec<&str> = rows.iter().map(|r| r.module.as_str()).collect();
        assert_eq!(modules, ["embedding", "encoder-per-layer", "head", "total"]);
        let params: Vec<usize> = rows.iter().map(|r| r.params).collect();
        assert_eq!(params, [72_320, 49_984, 4_225, 276_481]);
        let owned: Vec<BenchRow> = rep.rows().into_iter().cloned().collect();
        assert_eq!(rows, owned);
        assert!(rep.component_ms_mean() <= rep.total.latency_ms_mean);
        assert!((0.0..=1.0).contains(&rep.encoder_share));
    }

    #[test]
    fn protocol_preconditions() {
        let m = QeModel::<f32>::new(ModelConfig::toy(), Vocab::build([], 1000)).unwrap();
        assert!(profile_latency(&m, &[], 1, 10).is_err());
        assert!(profile_latency(&m, &inputs(), 0, 10).is_err());
        assert!(profile_latency(&m, &inputs(), 1, 9).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

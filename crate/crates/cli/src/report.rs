//! Tables assembled purely from files the other subcommands emit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use qe_core::eval::{aggregate_runs, read_sweep_csv, EvalReport, MetricTable, SweepPoint};
use qe_core::experiment::{read_regime_csv, summarize_regimes, RegimeCell};
use qe_core::{QeError, Result};

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| QeError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| QeError::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn is_seed_dir(c: &Component) -> bool {
    c.as_os_str()
        .to_str()
        .and_then(|s| s.strip_prefix("seed-"))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Directory of an `eval.json` relative to `root`, with `seed-N` levels
/// removed, so the seeds of one configuration land in one group.
fn group_label(root: &Path, file: &Path) -> String {
    let rel = file.parent().and_then(|p| p.strip_prefix(root).ok()).unwrap_or(Path::new(""));
    let mut label = root.display().to_string();
    for c in rel.components().filter(|c| !is_seed_dir(c)) {
        label.push('/');
        label.push_str(&c.as_os_str().to_string_lossy());
    }
    label
}

fn cell(t: &MetricTable, metric: &str, n_runs: usize) -> String {
    match t.get(metric) {
        Some(s) if n_runs > 1 => format!("{:.4} ± {:.4}", s.mean, s.std),
        Some(s) => format!("{:.4}", s.mean),
        None => "-".into(),
    }
}

fn eval_table(groups: &BTreeMap<String, EvalReport>) -> String {
    let mut metrics: Vec<String> = groups.values().flat_map(|r| r.overall.keys().cloned()).collect();
    metrics.sort();
    metrics.dedup();
    let mut out = format!("{:<36} {:>4}  {:<8}", "run", "n", "lang");
    for m in &metrics {
        let _ = write!(out, " {m:>17}");
    }
    out.push('\n');
    for (label, r) in groups {
        let mut rows: Vec<(&str, &MetricTable)> = vec![("all", &r.overall)];
        if r.per_lang.len() > 1 {
            rows.push(("lang-avg", &r.lang_average));
            rows.extend(r.per_lang.iter().map(|(l, t)| (l.as_str(), t)));
        }
        for (i, (lang, table)) in rows.into_iter().enumerate() {
            let (name, n) = if i == 0 {
                (label.as_str(), r.n_runs.to_string())
            } else {
                ("", String::new())
            };
            let _ = write!(out, "{name:<36} {n:>4}  {lang:<8}");
            for m in &metrics {
                let _ = write!(out, " {:>17}", cell(table, m, r.n_runs));
            }
            out.push('\n');
        }
    }
    out
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sweep_table(points: &[SweepPoint]) -> String {
    let mut groups: BTreeMap<(String, String), Vec<&SweepPoint>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.technique.clone(), format!("{:>8}", p.plan_param)))
            .or_default()
            .push(p);
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    let mut out = format!(
        "{:<16} {:>8} {:>6} {:>9} {:>10} {:>10} {:>10}\n",
        "technique", "param", "seeds", "speedup", "Δpearson%", "Δf1_51%", "Δf1_70%"
    );
    for ((technique, param), ps) in &groups {
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>6} {:>9} {:>10} {:>10} {:>10}",
            technique,
            param.trim(),
            ps.len(),
            fmt(mean(ps.iter().map(|p| Some(p.speedup)))),
            fmt(mean(ps.iter().map(|p| p.degradation_pearson_pct))),
            fmt(mean(ps.iter().map(|p| p.degradation_f1_51_pct))),
            fmt(mean(ps.iter().map(|p| p.degradation_f1_70_pct))),
        );
    }
    out
}

pub fn regime_table(cells: &[RegimeCell]) -> String {
    let mut out = format!(
        "{:<10} {:<20} {:<10} {:>8} {:>8}  ML<=BL\n",
        "lang", "plan", "metric", "ML", "BL"
    );
    for c in cells {
        let _ = writeln!(
            out,
            "{:<10} {:<20} {:<10} {:>8.4} {:>8.4}  {}",
            c.lang,
            c.plan,
            c.metric,
            c.ml,
            c.bl,
            if c.ml <= c.bl { "yes" } else { "no" }
        );
    }
    out
}

pub fn report(roots: &[PathBuf]) -> Result<String> {
    let mut evals: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    let mut sweeps = Vec::new();
    let mut regimes = Vec::new();
    for root in roots {
        if !root.is_dir() {
            return Err(QeError::Usage(format!("{} is not a directory", root.display())));
        }
        let mut files = Vec::new();
        walk(root, &mut files)?;
        for f in files {
            match f.file_name().and_then(|n| n.to_str()) {
                Some("eval.json") => {
                    let text = fs::read_to_string(&f).map_err(|e| QeError::io(&f, e))?;
                    let r: EvalReport = serde_json::from_str(&text)
                        .map_err(|e| QeError::Data { line: e.line(), msg: format!("{}: {e}", f.display()) })?;
                    evals.entry(group_label(root, &f)).or_default().push(r);
                }
                Some("sweep.csv") => sweeps.push(f),
                Some("regimes.csv") => regimes.push(f),
                _ => {}
            }
        }
    }
    if evals.is_empty() && sweeps.is_empty() && regimes.is_empty() {
        return Err(QeError::Degenerate("no eval.json, sweep.csv or regimes.csv found".into()));
    }
    let mut out = String::new();
    if !evals.is_empty() {
        let mut groups = BTreeMap::new();
        for (label, reports) in evals {
            let agg = aggregate_runs(&reports).map_err(|e| QeError::Degenerate(format!("{label}: {e}")))?;
            groups.insert(label, agg);
        }
        out.push_str(&eval_table(&groups));
    }
    for path in sweeps {
        let _ = writeln!(out, "\n{}", path.display());
        out.push_str(&sweep_table(&read_sweep_csv(&path)?));
    }
    for path in regimes {
        let _ = writeln!(out, "\n{}", path.display());
        out.push_str(&regime_table(&summarize_regimes(&read_regime_csv(&path)?)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_levels_are_merged() {
        let root = Path::new("runs");
        assert_eq!(group_label(root, Path::new("runs/seed-3/baseline/eval.json")), "runs/baseline");
        assert_eq!(group_label(root, Path::new("runs/seed-12/eval.json")), "runs");
        assert_eq!(group_label(root, Path::new("runs/seed-x/eval.json")), "runs/seed-x");
    }
}

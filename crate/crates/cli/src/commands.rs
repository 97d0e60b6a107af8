use std::fs;
use std::path::Path;
use std::process::Command as Process;

use qe_core::benchmark::{emit_table, profile_latency};
use qe_core::compress::CompressionPlan;
use qe_core::corpus::{load_mlqepe_tsv, synthesize_corpus, concat_multilingual, write_tsv, ColumnMap, QualityThreshold, SynthSpec};
use qe_core::eval::{evaluate_model, read_sweep_csv, sample_dump, write_sweep_csv, SweepPoint};
use qe_core::experiment::{
    baseline_point, compare_regimes, compress_run, summarize_regimes, sweep_point, train_baseline, write_regime_csv,
    ExperimentConfig, Run,
};
use qe_core::model::{load_checkpoint, load_checkpoint_for, read_manifest, save_checkpoint, QeModel};
use qe_core::tensor::{Precision, Real};
use qe_core::{QeError, Result};

use crate::config::{create_dir, load_experiment, plan_dir, resolve_plans, seed_dir, write_json};
use crate::svg::{scatter, Series, PALETTE};
use crate::{BenchArgs, Command, EvalArgs, ExperimentArgs, PlanArgs, SynthArgs, WORKERS_ENV};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(args) => synth(&args),
        Command::Train(exp) => {
            let cfg = load_experiment(&exp)?;
            with_precision(cfg.model.precision, || train_cmd::<f32>(&cfg), || train_cmd::<f64>(&cfg))
        }
        Command::Compress { exp, plans, checkpoint } => {
            let cfg = load_experiment(&exp)?;
            let plans = resolve_plans(&plans, &cfg)?;
            with_precision(
                cfg.model.precision,
                || compress_cmd::<f32>(&cfg, &plans, &checkpoint),
                || compress_cmd::<f64>(&cfg, &plans, &checkpoint),
            )
        }
        Command::Eval(args) => {
            let p = checkpoint_precision(&args.checkpoint, args.precision)?;
            with_precision(p, || eval_cmd::<f32>(&args), || eval_cmd::<f64>(&args))
        }
        Command::Bench(args) => {
            let p = checkpoint_precision(&args.checkpoint, None)?;
            with_precision(p, || bench_cmd::<f32>(&args), || bench_cmd::<f64>(&args))
        }
        Command::Sweep {
            exp,
            plans,
            save_checkpoints,
            worker,
        } => sweep_cmd(&exp, &plans, save_checkpoints, worker),
        Command::Report { runs, out } => {
            let text = crate::report::report(&runs)?;
            print!("{text}");
            if let Some(path) = out {
                qe_core::write_atomic(&path, text.as_bytes())?;
            }
            Ok(())
        }
        Command::Regimes { exp, plans } => {
            let mut cfg = load_experiment(&exp)?;
            cfg.plans = resolve_plans(&plans, &cfg)?;
            with_precision(cfg.model.precision, || regimes_cmd::<f32>(&cfg), || regimes_cmd::<f64>(&cfg))
        }
    }
}

fn with_precision(p: Precision, f32: impl FnOnce() -> Result<()>, f64: impl FnOnce() -> Result<()>) -> Result<()> {
    match p {
        Precision::F32 => f32(),
        Precision::F64 => f64(),
    }
}

fn checkpoint_precision(path: &Path, asked: Option<Precision>) -> Result<Precision> {
    let stored = read_manifest(path)?.dtype;
    match asked {
        Some(p) if p != stored => Err(QeError::Usage(format!(
            "checkpoint is {} but --precision {} was given",
            stored.as_str(),
            p.as_str()
        ))),
        _ => Ok(stored),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| QeError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_train {
        spec.n_train = n;
    }
    if let Some(n) = args.n_dev {
        spec.n_dev = n;
    }
    if let Some(n) = args.n_test {
        spec.n_test = n;
    }
    if let Some(s) = args.noise_std {
        spec.noise_std = s;
    }
    if args.languages == 0 {
        return Err(QeError::Usage("--languages must be at least 1".into()));
    }
    spec.validate()?;
    let splits = if args.languages == 1 {
        synthesize_corpus(&spec)?
    } else {
        let parts = spec.languages(args.languages).iter().map(synthesize_corpus).collect::<Result<Vec<_>>>()?;
        concat_multilingual(parts, spec.seed)?
    };
    create_dir(&args.out_dir)?;
    for (name, pairs) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        write_tsv(&args.out_dir.join(format!("{name}.tsv")), pairs)?;
    }
    write_json(&args.out_dir.join("spec.json"), &spec)?;
    println!(
        "wrote {} train / {} dev / {} test pairs ({} language(s)) to {}",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        args.languages,
        args.out_dir.display()
    );
    Ok(())
}

fn save_run<T: Real>(dir: &Path, run: &Run<T>, checkpoint: bool) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("eval.json"), &run.report)?;
    run.history.write_json(&dir.join("history.json"))?;
    write_json(&dir.join("latency.json"), &serde_json::json!({ "latency_ms_mean": run.latency_ms }))?;
    if checkpoint {
        save_checkpoint(&run.model, &dir.join("model.ckpt"))?;
    }
    Ok(())
}

fn summary_line(label: &str, run_seed: u64, report: &qe_core::eval::EvalReport, latency_ms: f64) -> String {
    let metrics: Vec<String> = report.overall.iter().map(|(k, s)| format!("{k} {:.4}", s.mean)).collect();
    format!("{label} seed {run_seed}: {} | {latency_ms:.3} ms/pair", metrics.join(", "))
}

fn train_cmd<T: Real>(cfg: &ExperimentConfig) -> Result<()> {
    let splits = cfg.corpus.load()?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    for &seed in &cfg.seeds {
        let run = train_baseline::<T>(cfg, &splits, seed)?;
        save_run(&seed_dir(&cfg.out_dir, seed), &run, true)?;
        println!("{}", summary_line("baseline", seed, &run.report, run.latency_ms));
    }
    Ok(())
}

fn compress_cmd<T: Real>(cfg: &ExperimentConfig, plans: &[CompressionPlan], checkpoint: &Path) -> Result<()> {
    if plans.is_empty() {
        return Err(QeError::Usage("no compression plan given (flags or config `plans`)".into()));
    }
    let model = load_checkpoint_for::<T>(checkpoint, cfg.mode)?;
    for p in plans {
        p.validate(model.n_layers())?;
    }
    let splits = cfg.corpus.load()?;
    let seed = cfg.seeds[0];
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    // Re-measure the input model on this machine so speedups compare like with like.
    let report = evaluate_model(&model, &splits.test, &cfg.thresholds, cfg.train.eval_batch_size)?;
    let n = cfg.bench.n_pairs.min(splits.test.len());
    let latency_ms = profile_latency(&model, &model.encode_pairs(&splits.test[..n]), cfg.bench.warmup, cfg.bench.reps)?
        .total
        .latency_ms_mean;
    let base = Run {
        seed,
        model,
        history: Default::default(),
        report,
        latency_ms,
    };
    let mut points = vec![baseline_point(&base)?];
    for plan in plans {
        let run = compress_run(cfg, &splits, &base, plan)?;
        save_run(&cfg.out_dir.join(plan_dir(plan)), &run, true)?;
        println!("{}", summary_line(&plan_dir(plan), seed, &run.report, run.latency_ms));
        points.push(sweep_point(&base, plan, &run)?);
    }
    write_sweep_csv(&points, &cfg.out_dir.join("points.csv"))
}

fn load_test(path: &Path, lang: &str) -> Result<Vec<qe_core::corpus::SentencePair>> {
    let pairs = load_mlqepe_tsv(path, &ColumnMap::mlqe_pe(), lang)?;
    if pairs.is_empty() {
        return Err(QeError::Degenerate(format!("{} holds no pairs", path.display())));
    }
    Ok(pairs)
}

fn eval_cmd<T: Real>(args: &EvalArgs) -> Result<()> {
    let model: QeModel<T> = match args.mode {
        Some(mode) => load_checkpoint_for(&args.checkpoint, mode)?,
        None => load_checkpoint(&args.checkpoint)?,
    };
    let pairs = load_test(&args.test, &args.lang)?;
    let thresholds: Vec<QualityThreshold> = args.thresholds.iter().map(|&t| QualityThreshold(t)).collect();
    if thresholds.is_empty() {
        return Err(QeError::Usage("--thresholds must not be empty".into()));
    }
    let report = evaluate_model(&model, &pairs, &thresholds, 128)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        qe_core::write_atomic(out, text.as_bytes())?;
    }
    if let Some(dump) = &args.dump {
        let rows = sample_dump(&model, &pairs, thresholds[0], 128)?;
        let mut csv = String::from("lang_pair,gold_da,pred,pred_da,gold_acceptable,pred_acceptable\n");
        for r in rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.lang_pair,
                r.gold_da,
                r.pred,
                r.pred_da.map_or(String::new(), |v| v.to_string()),
                r.gold_acceptable,
                r.pred_acceptable
            ));
        }
        qe_core::write_atomic(dump, csv.as_bytes())?;
    }
    Ok(())
}

fn bench_cmd<T: Real>(args: &BenchArgs) -> Result<()> {
    let model: QeModel<T> = load_checkpoint(&args.checkpoint)?;
    let pairs = load_test(&args.test, &args.lang)?;
    let n = args.n_pairs.min(pairs.len()).max(1);
    let report = profile_latency(&model, &model.encode_pairs(&pairs[..n]), args.warmup, args.reps)?;
    let (text, csv) = emit_table(&report)?;
    print!("{text}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        qe_core::write_atomic(&dir.join("bench.csv"), csv.as_bytes())?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    Ok(())
}

fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| QeError::Usage(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
    }
}

fn sweep_seed<T: Real>(cfg: &ExperimentConfig, seed: u64, save_checkpoints: bool) -> Result<()> {
    let splits = cfg.corpus.load()?;
    let dir = seed_dir(&cfg.out_dir, seed);
    let points = qe_core::experiment::sweep_seed::<T>(cfg, &splits, seed, |plan, run| {
        let sub = match plan {
            None => "baseline".to_string(),
            Some(p) => plan_dir(p),
        };
        log::info!("{}", summary_line(&sub, seed, &run.report, run.latency_ms));
        save_run(&dir.join(sub), run, save_checkpoints)
    })?;
    write_sweep_csv(&points, &dir.join("points.csv"))
}

fn sweep_cmd(exp: &ExperimentArgs, plan_args: &PlanArgs, save_checkpoints: bool, worker: bool) -> Result<()> {
    let mut cfg = load_experiment(exp)?;
    cfg.plans = resolve_plans(plan_args, &cfg)?;
    if cfg.plans.is_empty() {
        return Err(QeError::Usage("no compression plan given (flags or config `plans`)".into()));
    }
    create_dir(&cfg.out_dir)?;
    let run_seed = |seed: u64| {
        with_precision(
            cfg.model.precision,
            || sweep_seed::<f32>(&cfg, seed, save_checkpoints),
            || sweep_seed::<f64>(&cfg, seed, save_checkpoints),
        )
    };
    if worker {
        for &seed in &cfg.seeds {
            run_seed(seed)?;
        }
        return Ok(());
    }
    let resolved = cfg.out_dir.join("config.json");
    write_json(&resolved, &cfg)?;
    let n_workers = workers()?.min(cfg.seeds.len());
    if n_workers <= 1 {
        for &seed in &cfg.seeds {
            run_seed(seed)?;
        }
    } else {
        run_workers(&resolved, &cfg, n_workers)?;
    }
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        points.extend(read_sweep_csv(&seed_dir(&cfg.out_dir, seed).join("points.csv"))?);
    }
    write_sweep_csv(&points, &cfg.out_dir.join("sweep.csv"))?;
    let svg = sweep_svg(&points);
    qe_core::write_atomic(&cfg.out_dir.join("sweep.svg"), svg.as_bytes())?;
    println!(
        "{} sweep points ({} seeds × {} plans + baselines) in {}",
        points.len(),
        cfg.seeds.len(),
        cfg.plans.len(),
        cfg.out_dir.join("sweep.csv").display()
    );
    Ok(())
}

/// Runs seeds as independent child processes, at most `n` at a time. Each
/// child writes its own seed directory; the parent merges them afterwards.
fn run_workers(config: &Path, cfg: &ExperimentConfig, n: usize) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| QeError::io("current executable", e))?;
    let mut pending: Vec<u64> = cfg.seeds.iter().rev().cloned().collect();
    let mut running: Vec<(u64, std::process::Child)> = Vec::new();
    let mut failures = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < n {
            let Some(seed) = pending.pop() else { break };
            let child = Process::new(&exe)
                .arg("sweep")
                .arg("--config")
                .arg(config)
                .arg("--seed")
                .arg(seed.to_string())
                .arg("--worker")
                .env_remove(WORKERS_ENV)
                .spawn()
                .map_err(|e| QeError::io(&exe, e))?;
            running.push((seed, child));
        }
        let (seed, mut child) = running.remove(0);
        let status = child.wait().map_err(|e| QeError::io(&exe, e))?;
        if !status.success() {
            failures.push((seed, status.code()));
        }
    }
    match failures.first() {
        None => Ok(()),
        Some(&(seed, code)) => {
            let msg = format!("sweep worker for seed {seed} failed (exit {code:?})");
            Err(match code {
                Some(3) => QeError::Numeric(msg),
                Some(1) => QeError::Usage(msg),
                _ => QeError::Degenerate(msg),
            })
        }
    }
}

pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let pick = |f: fn(&SweepPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        points.iter().filter_map(|p| f(p).map(|d| (p.speedup, d))).collect()
    };
    let series = vec![
        Series {
            name: "Pearson".into(),
            color: PALETTE[0],
            points: pick(|p| p.degradation_pearson_pct),
        },
        Series {
            name: "F1 (51)".into(),
            color: PALETTE[1],
            points: pick(|p| p.degradation_f1_51_pct),
        },
        Series {
            name: "F1 (70)".into(),
            color: PALETTE[2],
            points: pick(|p| p.degradation_f1_70_pct),
        },
    ];
    let series: Vec<Series> = series.into_iter().filter(|s| !s.points.is_empty()).collect();
    scatter("Performance drop against speedup", "speedup (×)", "degradation (%)", &series, false)
}

fn regimes_cmd<T: Real>(cfg: &ExperimentConfig) -> Result<()> {
    let splits = cfg.corpus.load()?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    let rows = compare_regimes::<T>(cfg, &splits)?;
    write_regime_csv(&rows, &cfg.out_dir.join("regimes.csv"))?;
    let cells = summarize_regimes(&rows);
    let mut plans: Vec<&str> = cells.iter().map(|c| c.plan.as_str()).collect();
    plans.dedup();
    let series: Vec<Series> = plans
        .iter()
        .enumerate()
        .map(|(i, plan)| Series {
            name: plan.to_string(),
            color: PALETTE[i % PALETTE.len()],
            points: cells.iter().filter(|c| c.plan == *plan).map(|c| (c.bl, c.ml)).collect(),
        })
        .collect();
    let svg = scatter("Multilingual against bilingual", "bilingual", "multilingual", &series, true);
    qe_core::write_atomic(&cfg.out_dir.join("regimes.svg"), svg.as_bytes())?;
    print!("{}", crate::report::regime_table(&cells));
    Ok(())
}


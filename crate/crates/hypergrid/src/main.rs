//! Command-line driver: run studies, analyze results, execute two-stage
//! strategies, and export the simulated dataset.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime/evaluation failure,
//! 4 degenerate or incomplete design in an analysis.

use clap::{Parser, Subcommand};
use hypergrid::analysis::{
    balanced_anova, concordance, contour, gap_report, top_k_rank_correlations, AnalysisError,
};
use hypergrid::config::{FilterExpr, StudyConfig};
use hypergrid::data::{gen_sim, write_csv, SimSpec};
use hypergrid::evaluators::ReplayEvaluator;
use hypergrid::metrics::MetricKind;
use hypergrid::strategy::{
    evaluate_strategy, ffnn_two_stage, rf_two_stage, xgb_two_stage, StageMethod, StrategyOutcome,
    TreesPolicy,
};
use hypergrid::study::{
    best, read_records, record_to_line, records_to_csv, run_study, StudyOptions, StudyResult,
    TrialRecord,
};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

const EXIT_CONFIG: i32 = 2;
const EXIT_RUNTIME: i32 = 3;
const EXIT_DESIGN: i32 = 4;

#[derive(Parser)]
#[command(name = "hypergrid", about = "Hyperparameter study harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the run seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override parallelism (flag beats HYPERGRID_WORKERS beats config).
        #[arg(long)]
        parallelism: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit analysis reports from a completed study.
    Analyze {
        /// Study directory (study.json + results.jsonl) or a bare .jsonl file.
        #[arg(long)]
        results: PathBuf,
        /// Reports: anova, gap, topk-corr, concordance, contour.
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Numeric filter on a hyperparameter, e.g. "lr_rate > 0.01".
        #[arg(long)]
        filter: Option<String>,
        /// Hyperparameter pair for contour reports, e.g. "depth,msl".
        #[arg(long = "contour")]
        contours: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the built-in two-stage search plans.
    Strategy {
        #[arg(long)]
        config: PathBuf,
        /// Plan name: rf2, xgb2, or ffnn2.
        #[arg(long)]
        plan: String,
        /// Replay a completed full-grid study instead of live evaluation.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
        /// Training-set size for grid construction (defaults to the dataset's).
        #[arg(long)]
        n_train: Option<usize>,
        /// Feature count for grid construction (defaults to the dataset's).
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the simulated dataset and write train/valid CSV files.
    Simdata {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            seed,
            parallelism,
            out,
        } => cmd_run(&config, seed, parallelism, out),
        Command::Analyze {
            results,
            reports,
            metric,
            k,
            filter,
            contours,
            out,
        } => cmd_analyze(&results, &reports, &metric, k, filter.as_deref(), &contours, &out),
        Command::Strategy {
            config,
            plan,
            replay,
            metric,
            n_train,
            p,
            out,
        } => cmd_strategy(&config, &plan, replay.as_deref(), metric.as_deref(), n_train, p, out),
        Command::Simdata { n, rho, seed, out } => cmd_simdata(n, rho, seed, &out),
    };
    std::process::exit(code);
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn env_workers() -> Option<usize> {
    std::env::var("HYPERGRID_WORKERS").ok().and_then(|v| v.parse().ok())
}

fn cmd_run(
    config_path: &Path,
    seed: Option<u64>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
) -> i32 {
    let cfg = match StudyConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let space = match cfg.build_space() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let data = match cfg.build_dataset() {
        Ok(d) => d,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let evaluator = match cfg.build_evaluator(data) {
        Ok(ev) => ev,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = evaluator.check_space(&space) {
        return fail(EXIT_CONFIG, e);
    }

    let out_dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(EXIT_RUNTIME, e);
    }
    let results_path = out_dir.join("results.jsonl");
    let existing: Vec<TrialRecord> = if results_path.exists() {
        match read_records(&results_path) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_RUNTIME, format!("resuming {}: {e}", results_path.display())),
        }
    } else {
        Vec::new()
    };
    if !existing.is_empty() {
        println!("resuming: {} records already present", existing.len());
    }

    let opts = StudyOptions {
        selection: cfg.run.selection.clone(),
        parallelism: parallelism.or_else(env_workers).unwrap_or(cfg.run.parallelism),
        seed: seed.unwrap_or(cfg.run.seed),
        dataset_id: cfg.dataset_id(),
    };

    let append = match std::fs::OpenOptions::new().create(true).append(true).open(&results_path) {
        Ok(f) => Mutex::new(std::io::BufWriter::new(f)),
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let sink = |record: &TrialRecord| {
        if let Ok(line) = record_to_line(record) {
            let mut w = append.lock().unwrap();
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        }
    };

    let result = match run_study(&space, evaluator.as_ref(), &opts, existing, Some(&sink)) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    drop(append);

    if let Err(e) = result.save(&out_dir) {
        return fail(EXIT_RUNTIME, e);
    }
    if let Err(e) = records_to_csv(&result, &out_dir.join("results.csv")) {
        return fail(EXIT_RUNTIME, e);
    }
    if let Err(e) = write_run_summary(&result, &out_dir.join("summary.txt")) {
        return fail(EXIT_RUNTIME, e);
    }
    println!(
        "study complete: {} records ({} failed) in {}",
        result.records.len(),
        result.failed_count(),
        out_dir.display()
    );
    0
}

fn write_run_summary(result: &StudyResult, path: &Path) -> Result<(), std::io::Error> {
    let mut text = String::new();
    text.push_str(&format!(
        "records: {} (failed: {})\n",
        result.records.len(),
        result.failed_count()
    ));
    let mut metrics: Vec<String> = Vec::new();
    for r in result.ok_records() {
        for k in r.valid.keys() {
            if !metrics.contains(k) {
                metrics.push(k.clone());
            }
        }
    }
    metrics.sort();
    for name in &metrics {
        if let Ok(kind) = MetricKind::from_str(name) {
            if let Ok(b) = best(result, kind) {
                let gap = b
                    .train_metric(kind)
                    .map(|t| (t - b.valid_metric(kind).unwrap()).abs());
                text.push_str(&format!(
                    "best by {name}: index {} value {:.6}{}\n  config: {}\n",
                    b.index,
                    b.valid_metric(kind).unwrap(),
                    gap.map_or(String::new(), |g| format!(" (gap {g:.6})")),
                    serde_json::to_string(&b.config).unwrap_or_default(),
                ));
            }
        }
    }
    std::fs::write(path, text)
}

fn load_result(path: &Path) -> Result<StudyResult, String> {
    if path.is_dir() {
        StudyResult::load(path).map_err(|e| e.to_string())
    } else {
        let records = read_records(path).map_err(|e| e.to_string())?;
        StudyResult::from_records(records).map_err(|e| e.to_string())
    }
}

fn analysis_exit(e: &AnalysisError) -> i32 {
    match e {
        AnalysisError::Design(_) | AnalysisError::Degenerate(_) => EXIT_DESIGN,
        _ => EXIT_RUNTIME,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    results: &Path,
    reports: &[String],
    metric: &str,
    k: usize,
    filter: Option<&str>,
    contour_pairs: &[String],
    out: &Path,
) -> i32 {
    let result = match load_result(results) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let metric = match MetricKind::from_str(metric) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let filter_expr = match filter.map(FilterExpr::parse).transpose() {
        Ok(f) => f,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(f) = &filter_expr {
        if let Err(e) = f.check_against(&result.space) {
            return fail(EXIT_CONFIG, e);
        }
    }
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(EXIT_RUNTIME, e);
    }

    for report in reports {
        let status = match report.as_str() {
            "anova" => report_anova(&result, metric, filter_expr.as_ref(), out),
            "gap" => report_gap(&result, metric, out),
            "topk-corr" => report_topk(&result, metric, k, out),
            "concordance" => report_concordance(&result, k, out),
            "contour" => report_contours(&result, metric, contour_pairs, out),
            other => Err((EXIT_CONFIG, format!("unknown report `{other}`"))),
        };
        if let Err((code, msg)) = status {
            return fail(code, format!("report {report}: {msg}"));
        }
        println!("wrote report: {report}");
    }
    0
}

type ReportResult = Result<(), (i32, String)>;

fn io_err(e: impl std::fmt::Display) -> (i32, String) {
    (EXIT_RUNTIME, e.to_string())
}

fn report_anova(
    result: &StudyResult,
    metric: MetricKind,
    filter: Option<&FilterExpr>,
    out: &Path,
) -> ReportResult {
    let predicate = filter.map(|f| {
        let f = f.clone();
        move |r: &TrialRecord| f.matches(r)
    });
    let rows = match &predicate {
        Some(p) => balanced_anova(result, metric, Some(p)),
        None => balanced_anova(result, metric, None),
    }
    .map_err(|e| (analysis_exit(&e), e.to_string()))?;
    let mut w = csv::Writer::from_path(out.join("anova.csv")).map_err(io_err)?;
    w.write_record(["effect", "ss", "df", "f_stat", "f_share_pct", "cum_f_share_pct"])
        .map_err(io_err)?;
    for r in &rows {
        w.write_record([
            r.effect.clone(),
            r.ss.to_string(),
            r.df.to_string(),
            r.f_stat.to_string(),
            r.f_share_pct.to_string(),
            r.cum_f_share_pct.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn report_gap(result: &StudyResult, metric: MetricKind, out: &Path) -> ReportResult {
    let report = gap_report(result, metric, 0.9).map_err(|e| (analysis_exit(&e), e.to_string()))?;
    let mut w = csv::Writer::from_path(out.join("gap.csv")).map_err(io_err)?;
    w.write_record([
        "index",
        "metric_train",
        "metric_valid",
        "gap",
        "relative_gap_pct",
        "overfit",
        "underfit",
    ])
    .map_err(io_err)?;
    for r in &report.rows {
        w.write_record([
            r.index.to_string(),
            r.row.metric_train.to_string(),
            r.row.metric_valid.to_string(),
            r.row.gap.to_string(),
            r.row.relative_gap_pct.map_or(String::new(), |v| v.to_string()),
            r.overfit.to_string(),
            r.underfit.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let summary = serde_json::json!({
        "best_index": report.best_index,
        "best_gap": report.best_gap,
        "best_relative_gap_pct": report.best_relative_gap_pct,
    });
    std::fs::write(out.join("gap_summary.json"), summary.to_string()).map_err(io_err)?;
    Ok(())
}

fn report_topk(result: &StudyResult, metric: MetricKind, k: usize, out: &Path) -> ReportResult {
    let m =
        top_k_rank_correlations(result, metric, k).map_err(|e| (analysis_exit(&e), e.to_string()))?;
    let mut w = csv::Writer::from_path(out.join("topk_corr.csv")).map_err(io_err)?;
    let mut header = vec!["hp".to_string()];
    header.extend(m.names.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for (i, name) in m.names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for j in 0..m.names.len() {
            row.push(m.rho[i][j].map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn report_concordance(result: &StudyResult, k: usize, out: &Path) -> ReportResult {
    let c = concordance(result, &[k, 500]).map_err(|e| (analysis_exit(&e), e.to_string()))?;
    let mut w = csv::Writer::from_path(out.join("concordance.csv")).map_err(io_err)?;
    w.write_record(["index", "auc", "logloss"]).map_err(io_err)?;
    for (index, auc, logloss) in &c.pairs {
        w.write_record([index.to_string(), auc.to_string(), logloss.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    let summary = serde_json::json!({
        "rank_corr": c.rank_corr,
        "overlaps": c.overlaps,
        "warnings": c.warnings,
    });
    std::fs::write(out.join("concordance_summary.json"), summary.to_string()).map_err(io_err)?;
    Ok(())
}

fn report_contours(
    result: &StudyResult,
    metric: MetricKind,
    pairs: &[String],
    out: &Path,
) -> ReportResult {
    if pairs.is_empty() {
        return Err((EXIT_CONFIG, "contour report needs at least one --contour a,b".to_string()));
    }
    for pair in pairs {
        let (a, b) = pair
            .split_once(',')
            .ok_or((EXIT_CONFIG, format!("bad contour pair `{pair}`, want `a,b`")))?;
        let grid = contour(result, a.trim(), b.trim(), metric)
            .map_err(|e| (analysis_exit(&e), e.to_string()))?;
        let path = out.join(format!("contour_{}_{}.csv", a.trim(), b.trim()));
        let mut w = csv::Writer::from_path(path).map_err(io_err)?;
        let mut header = vec![format!("{}\\{}", grid.hp_a, grid.hp_b)];
        header.extend(grid.values_b.iter().map(|v| v.to_string()));
        w.write_record(&header).map_err(io_err)?;
        for (i, va) in grid.values_a.iter().enumerate() {
            let mut row = vec![va.to_string()];
            for j in 0..grid.values_b.len() {
                let (mean, _) = grid.at(i, j);
                row.push(mean.map_or(String::new(), |v| v.to_string()));
            }
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_strategy(
    config_path: &Path,
    plan: &str,
    replay: Option<&Path>,
    metric: Option<&str>,
    n_train: Option<usize>,
    p: Option<usize>,
    out: Option<PathBuf>,
) -> i32 {
    let cfg = match StudyConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let metric_name = metric
        .map(str::to_string)
        .or_else(|| cfg.analysis.as_ref().map(|a| a.metric.clone()));
    let metric = match metric_name.as_deref().map(MetricKind::from_str) {
        Some(Ok(m)) => m,
        Some(Err(e)) => return fail(EXIT_CONFIG, e),
        None => return fail(EXIT_CONFIG, "no metric given (flag --metric or analysis.metric)"),
    };

    let replay_result = match replay.map(load_result).transpose() {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let data = if replay_result.is_none() {
        match cfg.build_dataset() {
            Ok(d) => d,
            Err(e) => return fail(EXIT_RUNTIME, e),
        }
    } else {
        None
    };
    let (n_data, p_data) = data
        .as_ref()
        .map(|(train, _)| (train.n_rows, train.n_cols))
        .unwrap_or((0, 0));
    let n_train = n_train.unwrap_or(n_data);
    let p = p.unwrap_or(p_data);

    let evaluator: Box<dyn hypergrid::study::Evaluator> = match &replay_result {
        Some(full) => Box::new(ReplayEvaluator::from_records(full.space.clone(), &full.records)),
        None => match cfg.build_evaluator(data) {
            Ok(ev) => ev,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
    };

    let seed = cfg.run.seed;
    let stage1 = StageMethod::FullGrid;
    let outcome: Result<StrategyOutcome, _> = match plan {
        "rf2" => {
            if n_train == 0 || p == 0 {
                return fail(EXIT_CONFIG, "rf2 needs --n-train and --p (or a dataset)");
            }
            rf_two_stage(evaluator.as_ref(), n_train, p, metric, &stage1, seed)
        }
        "xgb2" => {
            let policy = match &replay_result {
                Some(full) => match full.space.param("trees") {
                    Some(param) => TreesPolicy::Grid(param.grid.clone()),
                    None => TreesPolicy::EarlyStopping,
                },
                None => TreesPolicy::EarlyStopping,
            };
            xgb_two_stage(evaluator.as_ref(), metric, &policy, false, &stage1, seed)
        }
        "ffnn2" => {
            if n_train == 0 {
                return fail(EXIT_CONFIG, "ffnn2 needs --n-train (or a dataset)");
            }
            ffnn_two_stage(
                evaluator.as_ref(),
                n_train,
                metric,
                &StageMethod::Random { n: 200, seed },
                seed,
            )
        }
        other => return fail(EXIT_CONFIG, format!("unknown plan `{other}` (rf2|xgb2|ffnn2)")),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };

    let out_dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(EXIT_RUNTIME, e);
    }
    for (i, stage) in outcome.stage_results.iter().enumerate() {
        if let Err(e) = stage.save(&out_dir.join(format!("stage{}", i + 1))) {
            return fail(EXIT_RUNTIME, e);
        }
    }
    let mut summary = serde_json::json!({
        "plan": plan,
        "metric": metric.name(),
        "r_opt": {
            "index": outcome.r_opt.index,
            "config": outcome.r_opt.config,
            "valid": outcome.r_opt.valid,
        },
        "trials_spent": outcome.trials_spent,
    });
    if let Some(full) = &replay_result {
        match evaluate_strategy(full, &outcome, metric) {
            Ok(score) => {
                summary["pct_better"] = serde_json::json!(score.pct_better);
                summary["rel_decrease_pct"] = serde_json::json!(score.rel_decrease_pct);
                summary["better_count"] = serde_json::json!(score.better_count);
                summary["grid_total"] = serde_json::json!(score.total);
            }
            Err(e) => return fail(EXIT_RUNTIME, e),
        }
    }
    let summary_path = out_dir.join("strategy_summary.json");
    if let Err(e) = std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).unwrap())
    {
        return fail(EXIT_RUNTIME, e);
    }
    println!(
        "strategy {plan}: {} trials, best {} = {:.6}",
        outcome.trials_spent,
        metric.name(),
        outcome.r_opt.valid_metric(metric).unwrap_or(f64::NAN)
    );
    0
}

fn cmd_simdata(n: usize, rho: f64, seed: u64, out: &Path) -> i32 {
    if n < 2 {
        return fail(EXIT_CONFIG, "n must be at least 2");
    }
    let spec = SimSpec::new(n, rho, seed);
    let (train, valid) = match gen_sim(&spec) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(EXIT_RUNTIME, e);
    }
    if let Err(e) = write_csv(&train, &out.join("train.csv")) {
        return fail(EXIT_RUNTIME, e);
    }
    if let Err(e) = write_csv(&valid, &out.join("valid.csv")) {
        return fail(EXIT_RUNTIME, e);
    }
    println!("wrote {} train and {} valid rows to {}", train.n_rows, valid.n_rows, out.display());
    0
}

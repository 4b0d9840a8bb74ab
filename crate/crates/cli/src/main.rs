//! `cfr`: generate biased environments, train and evaluate stable linear
//! models, run repeated sweeps and emit plot-ready tables.
//!
//! Exit codes: 0 success, 2 configuration or usage, 3 generation stall,
//! 4 training divergence, 5 data or dimension errors.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfr_core::classifier::{train_cfr_classifier, train_linear_classifier, predict_labels, cfr_logits, ce_loss};
use cfr_core::datagen::{generate_from_seed_with_stats, rng_from_seed, OutcomeForm};
use cfr_core::harness::{
    load_results_csv, report_from_records, run_scenario, save_results_csv, sort_records, table1_group, MethodSpec,
    Scenario, ScenarioReport, SuiteOptions, SUITE_GROUPS,
};
use cfr_core::io::{
    default_meta_path, read_embedding_csv, read_meta, read_model, read_xy_csv, write_dataset, write_json,
    ClassifierModelFile, ModelFile, RegressionModelFile,
};
use cfr_core::metrics::{accuracy, beta_error, rmse};
use cfr_core::regressors::{dwr_fit, lasso_fit, ols_fit, ridge_fit, train_cfr_xy, Method};
use cfr_core::{exec, CfrError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::CliConfig;

/// `println!` that tolerates a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "cfr", version, about = "Stable linear models via causality-based feature rectification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON configuration file; unknown keys are rejected. See `cfr defaults`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed overriding the configured one (dataset seed, trainer seed or sweep base seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for sweeps [default: all cores]. Never changes numeric results.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output path: file for gen/train/eval/defaults, directory for sweep/report.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic environment as CSV plus a metadata JSON sidecar.
    Gen(GenArgs),
    /// Fit a model and write it as JSON.
    Train(TrainArgs),
    /// Score a model on a dataset and write a metrics JSON.
    Eval(EvalArgs),
    /// Run repeated train/evaluate cycles over a grid of test environments.
    Sweep(SweepArgs),
    /// Turn a results CSV into plot-ready curve and bar tables.
    Report(ReportArgs),
    /// Print the full default configuration as JSON.
    Defaults,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of samples [default: config or 2000].
    #[arg(long)]
    n: Option<usize>,
    /// Number of features, even and >= 4 [default: config or 10].
    #[arg(long)]
    p: Option<usize>,
    /// Outcome form: poly, exp or linear_only [default: config or poly].
    #[arg(long, value_parser = parse_form)]
    form: Option<OutcomeForm>,
    /// Bias rate r with 1 < |r| <= 3 [default: config or 1.7].
    #[arg(long, allow_hyphen_values = true, conflicts_with = "unbiased")]
    r: Option<f64>,
    /// Sample without selection bias.
    #[arg(long)]
    unbiased: bool,
    /// Number of biased unstable features [default: max(1, p/10)].
    #[arg(long)]
    vb_size: Option<usize>,
    /// Outcome noise standard deviation [default: config or 0.3].
    #[arg(long)]
    noise: Option<f64>,
    /// Metadata path [default: <out>.meta.json].
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Regression: ols, ridge, lasso, dwr-like, cfr. Classification: cfr or linear.
    #[arg(long)]
    method: String,
    /// Training CSV (`x1..xp,y`, or `f1..fp,label` for classification).
    #[arg(long)]
    data: PathBuf,
    /// Metadata sidecar with ground truth [default: <data>.meta.json if present].
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Task::Regression)]
    task: Task,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation CSV.
    #[arg(long)]
    data: PathBuf,
    /// Metadata sidecar with ground truth [default: <data>.meta.json if present].
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Built-in scenario: table1-s1, table1-s2, table1-s3 or table1 (all).
    /// Without it the `scenario` block of the config is used.
    #[arg(long)]
    scenario: Option<String>,
    /// Override both training and per-environment test repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Override test repetitions per environment only.
    #[arg(long)]
    test_reps: Option<usize>,
    /// Run cells one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results CSV written by `sweep`.
    #[arg(long)]
    results: PathBuf,
}

fn parse_form(s: &str) -> std::result::Result<OutcomeForm, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown outcome form '{s}'; valid: poly, exp, linear_only"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.global.config.as_deref())?;
    let g = &cli.global;
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, g, a),
        Command::Train(a) => cmd_train(cfg, g, a),
        Command::Eval(a) => cmd_eval(g, a),
        Command::Sweep(a) => cmd_sweep(cfg, g, a),
        Command::Report(a) => cmd_report(g, a),
        Command::Defaults => {
            let text = serde_json::to_string_pretty(&CliConfig::default())?;
            match &g.out {
                Some(path) => write_text(path, &(text + "\n")),
                None => {
                    say!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CfrError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CfrError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_gen(cfg: CliConfig, g: &GlobalArgs, a: GenArgs) -> Result<()> {
    let mut spec = cfg.environment;
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(p) = a.p {
        spec.p = p;
    }
    if let Some(form) = a.form {
        spec.outcome_form = form;
    }
    if a.unbiased {
        spec.r_bias = None;
    } else if let Some(r) = a.r {
        spec.r_bias = Some(r);
    }
    if let Some(vb) = a.vb_size {
        spec.vb_size = Some(vb);
    }
    if let Some(noise) = a.noise {
        spec.noise_std = noise;
    }
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let data = g.out.clone().unwrap_or_else(|| PathBuf::from("data.csv"));
    let meta = a.meta.unwrap_or_else(|| default_meta_path(&data));
    let (ds, stats) = generate_from_seed_with_stats(&spec)?;
    write_dataset(&ds, &data, &meta)?;
    say!(
        "accepted {} / candidates drawn {} ({})",
        stats.accepted,
        stats.candidates,
        spec.describe()
    );
    say!("wrote {} and {}", data.display(), meta.display());
    Ok(())
}

fn meta_for(data: &Path, explicit: Option<PathBuf>) -> Result<Option<cfr_core::io::DatasetMeta>> {
    match explicit {
        Some(path) => read_meta(&path).map(Some),
        None => {
            let path = default_meta_path(data);
            if path.exists() {
                read_meta(&path).map(Some)
            } else {
                Ok(None)
            }
        }
    }
}

fn truth_from_meta(meta: &cfr_core::io::DatasetMeta) -> (Vec<f64>, Vec<usize>) {
    let truth: Vec<f64> = meta.beta_s.iter().chain(&meta.beta_v).copied().collect();
    let unstable = (meta.p_s..meta.p).collect();
    (truth, unstable)
}

/// `(beta_error, beta_v_error)` when ground truth of matching size is available.
fn coefficient_errors(beta: &[f64], meta: Option<&cfr_core::io::DatasetMeta>) -> Result<(Option<f64>, Option<f64>)> {
    let Some(meta) = meta else {
        return Ok((None, None));
    };
    let (truth, unstable) = truth_from_meta(meta);
    if truth.len() != beta.len() {
        return Err(CfrError::Consistency(format!(
            "model has {} coefficients but the metadata describes {}",
            beta.len(),
            truth.len()
        )));
    }
    Ok((
        Some(beta_error(beta, &truth, None)?),
        Some(beta_error(beta, &truth, Some(&unstable))?),
    ))
}

fn cmd_train(cfg: CliConfig, g: &GlobalArgs, a: TrainArgs) -> Result<()> {
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    match a.task {
        Task::Regression => {
            let method: Method = a.method.parse()?;
            let (x, y) = read_xy_csv(&a.data)?;
            let meta = meta_for(&a.data, a.meta)?;
            let file = match method {
                Method::Cfr => {
                    let mut tc = cfg.train.clone();
                    if let Some(seed) = g.seed {
                        tc.seed = seed;
                    }
                    tc.validate()?;
                    let model = train_cfr_xy(&x, &y, &tc, &mut rng_from_seed(tc.seed))?;
                    if let Some(last) = model.history.last() {
                        say!(
                            "epochs {} | reconstruction loss {:.6} | prediction loss {:.6}",
                            model.history.len(),
                            last.reconstruction,
                            last.prediction
                        );
                    }
                    RegressionModelFile::from_cfr(&model)?
                }
                other => {
                    let spec = match other {
                        Method::Ridge => MethodSpec::Ridge {
                            lambda: cfg.ridge_lambda,
                        },
                        Method::Lasso => MethodSpec::Lasso(cfg.lasso),
                        Method::DwrLike => MethodSpec::DwrLike(cfg.dwr),
                        _ => MethodSpec::Ols,
                    };
                    spec.validate()?;
                    let model = match &spec {
                        MethodSpec::Ridge { lambda } => ridge_fit(&x, &y, *lambda)?,
                        MethodSpec::Lasso(p) => lasso_fit(&x, &y, *p)?,
                        MethodSpec::DwrLike(p) => dwr_fit(&x, &y, *p)?.0,
                        _ => ols_fit(&x, &y)?,
                    };
                    if let Some(w) = &model.warning {
                        eprintln!("warning: {w}");
                    }
                    RegressionModelFile::from_linear(&model, spec.params_json())
                }
            };
            let pred = file.predict(&x)?;
            let sse: f64 = pred.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            say!("method {} | training loss (sum of squares) {:.6}", file.method, sse);
            let (be, bve) = coefficient_errors(&file.beta, meta.as_ref())?;
            if let (Some(be), Some(bve)) = (be, bve) {
                say!("beta_error {be:.6} | beta_v_error {bve:.6}");
            }
            write_json(&out, &file)?;
        }
        Task::Classification => {
            let rectify = match a.method.as_str() {
                "cfr" => true,
                "linear" => false,
                other => {
                    return Err(CfrError::Config(format!(
                        "unknown classification method '{other}'; valid tags: cfr, linear"
                    )))
                }
            };
            let (f, labels) = read_embedding_csv(&a.data)?;
            let mut cc = cfg.classifier.clone();
            if let Some(seed) = g.seed {
                cc.seed = seed;
            }
            let mut rng = rng_from_seed(cc.seed);
            let clf = if rectify {
                train_cfr_classifier(&f, &labels, &cc, &mut rng)?
            } else {
                train_linear_classifier(&f, &labels, &cc, &mut rng)?
            };
            let loss = ce_loss(&cfr_logits(&f, &clf)?, &labels)?;
            let acc = accuracy(&predict_labels(&f, &clf)?, &labels)?;
            say!("cross-entropy {loss:.6} | training accuracy {acc:.4}");
            write_json(&out, &ClassifierModelFile::from_classifier(&clf, &cc))?;
        }
    }
    say!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    rmse: Option<f64>,
    beta_error: Option<f64>,
    beta_v_error: Option<f64>,
    accuracy: Option<f64>,
}

fn cmd_eval(g: &GlobalArgs, a: EvalArgs) -> Result<()> {
    let metrics = match read_model(&a.model)? {
        ModelFile::Regression(model) => {
            let (x, y) = read_xy_csv(&a.data)?;
            let pred = model.predict(&x)?;
            let meta = meta_for(&a.data, a.meta)?;
            let (beta_error, beta_v_error) = coefficient_errors(&model.beta, meta.as_ref())?;
            EvalMetrics {
                rmse: Some(rmse(pred.as_slice(), y.as_slice())?),
                beta_error,
                beta_v_error,
                accuracy: None,
            }
        }
        ModelFile::Classifier(file) => {
            let clf = file.to_classifier()?;
            let (f, labels) = read_embedding_csv(&a.data)?;
            EvalMetrics {
                rmse: None,
                beta_error: None,
                beta_v_error: None,
                accuracy: Some(accuracy(&predict_labels(&f, &clf)?, &labels)?),
            }
        }
    };
    let text = serde_json::to_string_pretty(&metrics)?;
    say!("{text}");
    if let Some(out) = &g.out {
        write_text(out, &(text + "\n"))?;
    }
    Ok(())
}

fn sweep_scenarios(cfg: &CliConfig, g: &GlobalArgs, a: &SweepArgs) -> Result<Vec<Scenario>> {
    let mut scenarios = match a.scenario.as_deref() {
        Some("table1") => SUITE_GROUPS
            .iter()
            .map(|grp| table1_group(grp, SuiteOptions::default()))
            .collect::<Result<Vec<_>>>()?
            .concat(),
        Some(name) => table1_group(name, SuiteOptions::default())?,
        None => vec![cfg.scenario.clone().ok_or_else(|| {
            CfrError::Config(format!(
                "no scenario: pass --scenario ({}, table1) or set `scenario` in --config",
                SUITE_GROUPS.join(", ")
            ))
        })?],
    };
    for s in &mut scenarios {
        if let Some(r) = a.reps {
            s.train_reps = r;
            s.test_reps_per_env = r;
        }
        if let Some(t) = a.test_reps {
            s.test_reps_per_env = t;
        }
        if let Some(seed) = g.seed {
            s.base_seed = seed;
        }
        s.validate()?;
    }
    Ok(scenarios)
}

fn cmd_sweep(cfg: CliConfig, g: &GlobalArgs, a: SweepArgs) -> Result<()> {
    let scenarios = sweep_scenarios(&cfg, g, &a)?;
    let execution = if a.sequential {
        cfr_core::Execution::Sequential
    } else {
        cfg.execution
    };
    let outcomes = exec::with_threads(g.threads, || {
        scenarios
            .iter()
            .map(|s| run_scenario(s, execution))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut records: Vec<_> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
    sort_records(&mut records);
    let reports: BTreeMap<String, ScenarioReport> =
        outcomes.iter().map(|o| (o.scenario.clone(), o.report.clone())).collect();

    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("sweep-out"));
    create_dir(&dir)?;
    save_results_csv(&dir.join("results.csv"), &records)?;
    write_json(&dir.join("report.json"), &reports)?;
    say!("{}", summary_table(&reports).trim_end_matches('\n'));
    say!("wrote {} and {}", dir.join("results.csv").display(), dir.join("report.json").display());
    Ok(())
}

/// Per-configuration table; `*` marks the lowest beta_v_error and SE.
fn summary_table(reports: &BTreeMap<String, ScenarioReport>) -> String {
    let mut out = String::new();
    for (scenario, methods) in reports {
        let best = |f: fn(&cfr_core::metrics::StabilityReport) -> f64| {
            methods.values().map(f).fold(f64::INFINITY, f64::min)
        };
        let best_bv = best(|r| r.beta_v_error_mean);
        let best_se = best(|r| r.se);
        let _ = writeln!(out, "{scenario}");
        let _ = writeln!(
            out,
            "  {:<10} {:>14} {:>12} {:>10} {:>10}",
            "method", "beta_v_error", "(variance)", "AE", "SE"
        );
        for (method, r) in methods {
            let mark = |v: f64, b: f64| if v == b { "*" } else { " " };
            let _ = writeln!(
                out,
                "  {:<10} {:>13.4}{} {:>12.2e} {:>10.4} {:>9.4}{}",
                method,
                r.beta_v_error_mean,
                mark(r.beta_v_error_mean, best_bv),
                r.beta_v_error_var,
                r.ae,
                r.se,
                mark(r.se, best_se)
            );
        }
    }
    out
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn cmd_report(g: &GlobalArgs, a: ReportArgs) -> Result<()> {
    let records = load_results_csv(&a.results)?;
    let reports = report_from_records(&records)?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("report-out"));
    create_dir(&dir)?;
    for (scenario, methods) in &reports {
        let mut curves = String::from("r_test,method,mean_rmse\n");
        let mut bars = String::from("method,beta_v_error_mean,beta_v_error_var\n");
        for (method, r) in methods {
            for env in &r.per_env {
                let _ = writeln!(curves, "{:?},{method},{:?}", env.r_test, env.mean_rmse);
            }
            let _ = writeln!(bars, "{method},{:?},{:?}", r.beta_v_error_mean, r.beta_v_error_var);
        }
        let s = slug(scenario);
        write_text(&dir.join(format!("curves_{s}.csv")), &curves)?;
        write_text(&dir.join(format!("beta_v_{s}.csv")), &bars)?;
    }
    write_json(&dir.join("report.json"), &reports)?;
    say!("wrote plot data for {} scenario(s) to {}", reports.len(), dir.display());
    Ok(())
}

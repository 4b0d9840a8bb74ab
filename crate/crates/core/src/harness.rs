//! Repeated train/evaluate protocol over a grid of test environments.
//!
//! Every random stream is seeded from a hash of `(base_seed, configuration,
//! purpose, method, rep, r_test, test_rep)`, so results do not depend on cell
//! scheduling or thread count. Training data and test data are shared by all
//! methods within a repetition; only method-internal randomness differs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{generate_from_seed, rng_from_seed, Dataset, EnvironmentSpec, OutcomeForm};
use crate::error::{CfrError, Result};
use crate::exec::Execution;
use crate::metrics::{beta_error, rmse, stability_report, EnvResult, StabilityReport};
use crate::regressors::{
    dwr_fit, lasso_fit, ols_fit, ridge_fit, train_cfr, CfrModel, DwrParams, LassoParams, LinearModel, Method,
    TrainConfig,
};

pub const DEFAULT_TEST_GRID: [f64; 12] = [-3.0, -2.5, -2.0, -1.7, -1.5, -1.3, 1.3, 1.5, 1.7, 2.0, 2.5, 3.0];
pub const DEFAULT_REPS: usize = 50;
pub const DEFAULT_BASE_SEED: u64 = 47;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;
pub const DEFAULT_LASSO_LAMBDA: f64 = 20.0;

/// A method tag together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "kebab-case")]
pub enum MethodSpec {
    Ols,
    Ridge { lambda: f64 },
    Lasso(LassoParams),
    DwrLike(DwrParams),
    Cfr(TrainConfig),
}

impl MethodSpec {
    pub fn method(&self) -> Method {
        match self {
            MethodSpec::Ols => Method::Ols,
            MethodSpec::Ridge { .. } => Method::Ridge,
            MethodSpec::Lasso(_) => Method::Lasso,
            MethodSpec::DwrLike(_) => Method::DwrLike,
            MethodSpec::Cfr(_) => Method::Cfr,
        }
    }

    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Ols => MethodSpec::Ols,
            Method::Ridge => MethodSpec::Ridge {
                lambda: DEFAULT_RIDGE_LAMBDA,
            },
            Method::Lasso => MethodSpec::Lasso(LassoParams::new(DEFAULT_LASSO_LAMBDA)),
            Method::DwrLike => MethodSpec::DwrLike(DwrParams::default()),
            Method::Cfr => MethodSpec::Cfr(TrainConfig::default()),
        }
    }

    pub fn defaults() -> Vec<MethodSpec> {
        Method::ALL.iter().map(|&m| MethodSpec::default_for(m)).collect()
    }

    /// Hyperparameters as a JSON object (the `params` payload).
    pub fn params_json(&self) -> serde_json::Value {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.get("params").cloned())
            .unwrap_or_else(|| serde_json::json!({}))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Ridge { lambda } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                Err(CfrError::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")))
            }
            MethodSpec::Lasso(p) if !(p.lambda >= 0.0 && p.lambda.is_finite()) => Err(CfrError::Config(format!(
                "lasso lambda must be finite and >= 0, got {}",
                p.lambda
            ))),
            MethodSpec::DwrLike(p) if !(p.lr >= 0.0 && p.lr.is_finite()) => {
                Err(CfrError::Config(format!("dwr-like lr must be finite and >= 0, got {}", p.lr)))
            }
            MethodSpec::Cfr(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }

    /// Fits on `ds`; `seed` drives any method-internal randomness.
    pub fn fit(&self, ds: &Dataset, seed: u64) -> Result<FittedModel> {
        let (x, y) = (ds.x(), ds.y());
        Ok(match self {
            MethodSpec::Ols => FittedModel::Linear(ols_fit(x, y)?),
            MethodSpec::Ridge { lambda } => FittedModel::Linear(ridge_fit(x, y, *lambda)?),
            MethodSpec::Lasso(p) => FittedModel::Linear(lasso_fit(x, y, *p)?),
            MethodSpec::DwrLike(p) => FittedModel::Linear(dwr_fit(x, y, *p)?.0),
            MethodSpec::Cfr(cfg) => FittedModel::Cfr(train_cfr(ds, cfg, &mut rng_from_seed(seed))?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Linear(LinearModel),
    Cfr(CfrModel),
}

impl FittedModel {
    pub fn beta(&self) -> &[f64] {
        match self {
            FittedModel::Linear(m) => &m.beta,
            FittedModel::Cfr(m) => &m.beta,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Cfr(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub train_spec: EnvironmentSpec,
    #[serde(default = "MethodSpec::defaults")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_grid")]
    pub test_grid: Vec<f64>,
    #[serde(default = "default_reps")]
    pub train_reps: usize,
    #[serde(default = "default_reps")]
    pub test_reps_per_env: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
}

fn default_grid() -> Vec<f64> {
    DEFAULT_TEST_GRID.to_vec()
}

fn default_reps() -> usize {
    DEFAULT_REPS
}

fn default_base_seed() -> u64 {
    DEFAULT_BASE_SEED
}

impl Scenario {
    /// Scenario with default methods, grid, repetitions and seed.
    pub fn new(name: impl Into<String>, train_spec: EnvironmentSpec) -> Self {
        Scenario {
            name: name.into(),
            train_spec,
            methods: MethodSpec::defaults(),
            test_grid: default_grid(),
            train_reps: DEFAULT_REPS,
            test_reps_per_env: DEFAULT_REPS,
            base_seed: DEFAULT_BASE_SEED,
        }
    }

    pub fn with_reps(mut self, train_reps: usize, test_reps_per_env: usize) -> Self {
        self.train_reps = train_reps;
        self.test_reps_per_env = test_reps_per_env;
        self
    }

    pub fn with_methods(mut self, methods: Vec<MethodSpec>) -> Self {
        self.methods = methods;
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.test_grid = grid;
        self
    }

    pub fn with_base_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train_spec.validate()?;
        if self.train_reps == 0 || self.test_reps_per_env == 0 {
            return Err(CfrError::Config("train_reps and test_reps_per_env must be >= 1".into()));
        }
        if self.test_grid.len() < 2 {
            return Err(CfrError::Config(format!(
                "test_grid needs at least 2 environments, got {}",
                self.test_grid.len()
            )));
        }
        for &r in &self.test_grid {
            crate::datagen::validate_bias_rate(r)?;
        }
        let mut sorted = self.test_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CfrError::Config("test_grid contains duplicate values".into()));
        }
        if self.methods.is_empty() {
            return Err(CfrError::Config("scenario needs at least one method".into()));
        }
        let mut tags: Vec<Method> = self.methods.iter().map(MethodSpec::method).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(CfrError::Config("each method may appear only once per scenario".into()));
        }
        self.methods.iter().try_for_each(MethodSpec::validate)
    }
}

/// Seed material identifying a training configuration; excludes the scenario name
/// so identical configurations in different scenarios draw identical data.
pub fn config_key(spec: &EnvironmentSpec) -> String {
    let r = spec.r_bias.map_or_else(|| "none".into(), |r| format!("{r:?}"));
    format!(
        "n={};p={};form={};r={};vb={};noise={:?}",
        spec.n,
        spec.p,
        spec.outcome_form,
        r,
        spec.biased_count(),
        spec.noise_std
    )
}

/// Deterministic 64-bit seed from a base seed and a list of labels.
pub fn derive_seed(base_seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn r_label(r: f64) -> String {
    format!("{r:?}")
}

pub fn train_data_seed(base_seed: u64, key: &str, rep: usize) -> u64 {
    derive_seed(base_seed, &[key, "train", &rep.to_string()])
}

pub fn fit_seed(base_seed: u64, key: &str, method: Method, rep: usize) -> u64 {
    derive_seed(base_seed, &[key, "fit", method.as_str(), &rep.to_string()])
}

/// Seed anchoring the test datasets of one (training rep, r_test) cell.
pub fn eval_cell_seed(base_seed: u64, key: &str, rep: usize, r_test: f64) -> u64 {
    derive_seed(base_seed, &[key, "eval", &rep.to_string(), &r_label(r_test)])
}

fn test_data_seed(cell_seed: u64, r_test: f64, test_rep: usize) -> u64 {
    derive_seed(cell_seed, &[&r_label(r_test), &test_rep.to_string()])
}

fn coefficient_errors(beta_hat: &[f64], ds: &Dataset) -> Result<(f64, f64)> {
    let truth: Vec<f64> = ds.beta_true().iter().copied().collect();
    let all = beta_error(beta_hat, &truth, None)?;
    let unstable = beta_error(beta_hat, &truth, Some(&ds.unstable_indices()))?;
    Ok((all, unstable))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleRun {
    pub model: FittedModel,
    pub beta_error: f64,
    pub beta_v_error: f64,
}

/// Generates one training set from `(train_spec, seed)` and fits `method` on it.
pub fn run_single(train_spec: &EnvironmentSpec, method: &MethodSpec, seed: u64) -> Result<SingleRun> {
    let ds = generate_from_seed(&train_spec.clone().with_seed(seed))?;
    let model = method.fit(&ds, seed)?;
    let (beta_error, beta_v_error) = coefficient_errors(model.beta(), &ds)?;
    Ok(SingleRun {
        model,
        beta_error,
        beta_v_error,
    })
}

fn test_spec(template: &EnvironmentSpec, r_test: f64, seed: u64) -> EnvironmentSpec {
    template.clone().with_r_bias(Some(r_test)).with_seed(seed)
}

/// Mean RMSE of each model over `reps` fresh test sets at one bias rate.
fn evaluate_cell(
    models: &[&FittedModel],
    template: &EnvironmentSpec,
    r_test: f64,
    reps: usize,
    cell_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(reps); models.len()];
    for t in 0..reps {
        let ds = generate_from_seed(&test_spec(template, r_test, test_data_seed(cell_seed, r_test, t)))?;
        let truth = ds.y().as_slice();
        for (k, m) in models.iter().enumerate() {
            let pred = m.predict(ds.x())?;
            out[k].push(rmse(pred.as_slice(), truth)?);
        }
    }
    Ok(out)
}

/// RMSE of `model` on `reps` test sets per bias rate. Seeds depend on the
/// value of `r_test`, not its position in the grid.
pub fn evaluate_across_envs(
    model: &FittedModel,
    test_grid: &[f64],
    spec_template: &EnvironmentSpec,
    reps: usize,
    base_seed: u64,
) -> Result<Vec<EnvResult>> {
    if reps == 0 {
        return Err(CfrError::Config("evaluation reps must be >= 1".into()));
    }
    test_grid
        .iter()
        .map(|&r| {
            crate::datagen::validate_bias_rate(r)?;
            let seed = derive_seed(base_seed, &["eval", &r_label(r)]);
            let mut values = evaluate_cell(&[model], spec_template, r, reps, seed)?;
            EnvResult::new(r, values.remove(0))
        })
        .collect()
}

/// One row of the results table. Training rows have no `r_test`/`rmse`;
/// evaluation rows carry the rep's coefficient errors and its mean RMSE at `r_test`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub r_train: Option<f64>,
    pub r_test: Option<f64>,
    pub rep: usize,
    pub seed: u64,
    pub rmse: Option<f64>,
    pub beta_error: f64,
    pub beta_v_error: f64,
}

impl RunRecord {
    fn sort_key(&self) -> (&str, Method, usize, Option<u64>) {
        // Option<_>::None sorts first, putting the training row ahead of its evaluations
        (&self.scenario, self.method, self.rep, self.r_test.map(total_order_key))
    }
}

fn total_order_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Per-method reports for one scenario, keyed by method tag.
pub type ScenarioReport = BTreeMap<String, StabilityReport>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub records: Vec<RunRecord>,
    pub report: ScenarioReport,
}

fn cell_error(scenario: &str, what: String, e: CfrError) -> CfrError {
    CfrError::Cell {
        cell: format!("scenario={scenario}, {what}"),
        source: Box::new(e),
    }
}

/// Runs the full protocol for one scenario.
pub fn run_scenario(s: &Scenario, exec: Execution) -> Result<ScenarioOutcome> {
    s.validate()?;
    let key = config_key(&s.train_spec);
    let reps: Vec<usize> = (0..s.train_reps).collect();

    let trained: Vec<(Dataset, Vec<SingleRun>)> = exec.try_map(&reps, |&rep| {
        let seed = train_data_seed(s.base_seed, &key, rep);
        let ds = generate_from_seed(&s.train_spec.clone().with_seed(seed))
            .map_err(|e| cell_error(&s.name, format!("training data, rep={rep}, seed={seed}"), e))?;
        let runs = s
            .methods
            .iter()
            .map(|m| {
                let fit = fit_seed(s.base_seed, &key, m.method(), rep);
                let model = m.fit(&ds, fit)?;
                let (beta_error, beta_v_error) = coefficient_errors(model.beta(), &ds)?;
                Ok(SingleRun {
                    model,
                    beta_error,
                    beta_v_error,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| cell_error(&s.name, format!("training, rep={rep}, seed={seed}"), e))?;
        Ok::<_, CfrError>((ds, runs))
    })?;

    let eval_cells: Vec<(usize, f64)> = reps
        .iter()
        .flat_map(|&rep| s.test_grid.iter().map(move |&r| (rep, r)))
        .collect();
    let evaluated: Vec<Vec<Vec<f64>>> = exec.try_map(&eval_cells, |&(rep, r)| {
        let models: Vec<&FittedModel> = trained[rep].1.iter().map(|run| &run.model).collect();
        let seed = eval_cell_seed(s.base_seed, &key, rep, r);
        evaluate_cell(&models, &s.train_spec, r, s.test_reps_per_env, seed)
            .map_err(|e| cell_error(&s.name, format!("evaluation, rep={rep}, r_test={r}, seed={seed}"), e))
    })?;

    let mut records = Vec::with_capacity(s.methods.len() * s.train_reps * (s.test_grid.len() + 1));
    let base = |method: Method, run: &SingleRun, rep: usize| RunRecord {
        scenario: s.name.clone(),
        method,
        n: s.train_spec.n,
        p: s.train_spec.p,
        r_train: s.train_spec.r_bias,
        r_test: None,
        rep,
        seed: train_data_seed(s.base_seed, &key, rep),
        rmse: None,
        beta_error: run.beta_error,
        beta_v_error: run.beta_v_error,
    };
    for (rep, (_, runs)) in trained.iter().enumerate() {
        for (k, m) in s.methods.iter().enumerate() {
            records.push(base(m.method(), &runs[k], rep));
        }
    }
    for (&(rep, r), per_model) in eval_cells.iter().zip(&evaluated) {
        for (k, m) in s.methods.iter().enumerate() {
            let mut rec = base(m.method(), &trained[rep].1[k], rep);
            rec.r_test = Some(r);
            rec.seed = eval_cell_seed(s.base_seed, &key, rep, r);
            rec.rmse = Some(crate::metrics::mean(&per_model[k]));
            records.push(rec);
        }
    }
    sort_records(&mut records);
    let mut reports = report_from_records(&records)?;
    let report = reports.remove(&s.name).unwrap_or_default();
    Ok(ScenarioOutcome {
        scenario: s.name.clone(),
        records,
        report,
    })
}

/// Aggregates a record table into per-scenario, per-method reports.
pub fn report_from_records(records: &[RunRecord]) -> Result<BTreeMap<String, ScenarioReport>> {
    #[derive(Default)]
    struct Acc {
        beta_v: Vec<(usize, f64)>,
        envs: BTreeMap<u64, (f64, Vec<(usize, f64)>)>,
    }
    let mut groups: BTreeMap<(String, String), Acc> = BTreeMap::new();
    for rec in records {
        let acc = groups
            .entry((rec.scenario.clone(), rec.method.as_str().to_string()))
            .or_default();
        match (rec.r_test, rec.rmse) {
            (None, None) => acc.beta_v.push((rec.rep, rec.beta_v_error)),
            (Some(r), Some(v)) => acc
                .envs
                .entry(total_order_key(r))
                .or_insert_with(|| (r, Vec::new()))
                .1
                .push((rec.rep, v)),
            _ => {
                return Err(CfrError::Consistency(format!(
                    "record for {}/{} rep {} has only one of r_test and rmse",
                    rec.scenario, rec.method, rec.rep
                )))
            }
        }
    }
    let mut out: BTreeMap<String, ScenarioReport> = BTreeMap::new();
    for ((scenario, method), mut acc) in groups {
        acc.beta_v.sort_by_key(|&(rep, _)| rep);
        let beta_v: Vec<f64> = acc.beta_v.iter().map(|&(_, v)| v).collect();
        let envs = acc
            .envs
            .into_values()
            .map(|(r, mut vals)| {
                vals.sort_by_key(|&(rep, _)| rep);
                EnvResult::new(r, vals.into_iter().map(|(_, v)| v).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let report = stability_report(&beta_v, &envs)
            .map_err(|e| cell_error(&scenario, format!("aggregation, method={method}"), e))?;
        out.entry(scenario).or_default().insert(method, report);
    }
    Ok(out)
}

pub const RESULTS_HEADER: [&str; 11] = [
    "scenario",
    "method",
    "n",
    "p",
    "r_train",
    "r_test",
    "rep",
    "seed",
    "rmse",
    "beta_error",
    "beta_v_error",
];

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

/// Writes records in the given order with round-trip float formatting.
pub fn write_results_csv(w: impl Write, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| CfrError::Consistency(format!("writing results: {e}"));
    out.write_record(RESULTS_HEADER).map_err(to_err)?;
    for r in records {
        out.write_record([
            r.scenario.clone(),
            r.method.as_str().to_string(),
            r.n.to_string(),
            r.p.to_string(),
            opt_f64(r.r_train),
            opt_f64(r.r_test),
            r.rep.to_string(),
            r.seed.to_string(),
            opt_f64(r.rmse),
            format!("{:?}", r.beta_error),
            format!("{:?}", r.beta_v_error),
        ])
        .map_err(to_err)?;
    }
    out.flush().map_err(|e| CfrError::Consistency(format!("writing results: {e}")))
}

pub fn results_csv_string(records: &[RunRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, records)?;
    String::from_utf8(buf).map_err(|e| CfrError::Consistency(e.to_string()))
}

pub fn save_results_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CfrError::io(path, e))?;
    write_results_csv(std::io::BufWriter::new(file), records)
}

/// Parses a results table; errors name the offending row and column.
pub fn read_results_csv(r: impl std::io::Read) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header_err = |message: String| CfrError::Parse {
        line: 1,
        field: "header".into(),
        message,
    };
    let headers = reader.headers().map_err(|e| header_err(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != RESULTS_HEADER {
        let missing: Vec<&str> = RESULTS_HEADER.iter().copied().filter(|h| !cols.contains(h)).collect();
        return Err(header_err(if missing.is_empty() {
            format!("expected columns {}", RESULTS_HEADER.join(","))
        } else {
            format!("missing columns: {}", missing.join(","))
        }));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CfrError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            field: "*".into(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize, what: &str| CfrError::Parse {
            line,
            field: RESULTS_HEADER[i].into(),
            message: format!("'{}' is not {what}", field(i)),
        };
        let int = |i: usize| field(i).parse::<usize>().map_err(|_| bad(i, "a non-negative integer"));
        let num = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i, "a number"));
        let opt = |i: usize| {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        out.push(RunRecord {
            scenario: field(0).to_string(),
            method: field(1).parse().map_err(|_| bad(1, "a method tag"))?,
            n: int(2)?,
            p: int(3)?,
            r_train: opt(4)?,
            r_test: opt(5)?,
            rep: int(6)?,
            seed: field(7).parse::<u64>().map_err(|_| bad(7, "a 64-bit seed"))?,
            rmse: opt(8)?,
            beta_error: num(9)?,
            beta_v_error: num(10)?,
        });
    }
    Ok(out)
}

pub fn load_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CfrError::io(path, e))?;
    read_results_csv(std::io::BufReader::new(file))
}

/// Settings shared by the three table scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub train_reps: usize,
    pub test_reps_per_env: usize,
    pub base_seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            train_reps: DEFAULT_REPS,
            test_reps_per_env: DEFAULT_REPS,
            base_seed: DEFAULT_BASE_SEED,
        }
    }
}

/// Names of the built-in scenario groups.
pub const SUITE_GROUPS: [&str; 3] = ["table1-s1", "table1-s2", "table1-s3"];

/// Scenarios of one built-in group: varying n, varying p, or varying r_train.
pub fn table1_group(group: &str, opts: SuiteOptions) -> Result<Vec<Scenario>> {
    let make = |name: String, n: usize, p: usize, r: f64| {
        Scenario::new(name, EnvironmentSpec::new(n, p, OutcomeForm::Poly, Some(r), 0))
            .with_reps(opts.train_reps, opts.test_reps_per_env)
            .with_base_seed(opts.base_seed)
    };
    Ok(match group {
        "table1-s1" => [1000, 2000, 4000]
            .iter()
            .map(|&n| make(format!("table1-s1/n={n}"), n, 10, 1.7))
            .collect(),
        "table1-s2" => [10, 20, 40]
            .iter()
            .map(|&p| make(format!("table1-s2/p={p}"), 2000, p, 1.7))
            .collect(),
        "table1-s3" => [1.5, 1.7, 2.0]
            .iter()
            .map(|&r| make(format!("table1-s3/r={r}"), 2000, 20, r))
            .collect(),
        other => {
            return Err(CfrError::Config(format!(
                "unknown scenario '{other}'; valid: {}, table1",
                SUITE_GROUPS.join(", ")
            )))
        }
    })
}

pub fn table1_scenarios(opts: SuiteOptions) -> Vec<Scenario> {
    SUITE_GROUPS
        .iter()
        .flat_map(|g| table1_group(g, opts).unwrap_or_default())
        .collect()
}

/// Runs all nine table configurations.
pub fn table1_suite(opts: SuiteOptions, exec: Execution) -> Result<Vec<ScenarioOutcome>> {
    table1_scenarios(opts).iter().map(|s| run_scenario(s, exec)).collect()
}

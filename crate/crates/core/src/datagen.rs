//! Synthetic environments with stable features `S`, unstable features `V` and
//! selection bias on a subset of `V`.
//!
//! Covariates: `V` and the auxiliary `Z` are i.i.d. standard normal and
//! `S[, i] = 0.8 Z[, i] + 0.2 Z[, i + 1]`. Outcomes follow the stable signal
//! `f(S)` plus Gaussian noise; `V` never enters the outcome (`beta_v = 0`).
//! Biased environments keep a candidate row with probability
//! `prod_i |r|^(-5 |f(S) - sign(r) V_i|)` over the biased columns.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CfrError, Result};

/// Candidate draws allowed before rejection sampling gives up.
pub const DEFAULT_MAX_CANDIDATES: u64 = 100_000_000;
pub const DEFAULT_NOISE_STD: f64 = 0.3;

/// The random stream used by every generator in this crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeForm {
    Poly,
    Exp,
    LinearOnly,
}

impl OutcomeForm {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeForm::Poly => "poly",
            OutcomeForm::Exp => "exp",
            OutcomeForm::LinearOnly => "linear_only",
        }
    }

    fn has_interaction(self) -> bool {
        !matches!(self, OutcomeForm::LinearOnly)
    }
}

impl std::fmt::Display for OutcomeForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_STD
}

fn default_max_candidates() -> u64 {
    DEFAULT_MAX_CANDIDATES
}

/// Recipe for one synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub n: usize,
    pub p: usize,
    pub outcome_form: OutcomeForm,
    /// Bias rate; `None` samples without selection.
    #[serde(default)]
    pub r_bias: Option<f64>,
    /// Number of biased unstable columns (the first ones of `V`).
    /// `None` resolves to `max(1, floor(0.1 p))`.
    #[serde(default)]
    pub vb_size: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: u64,
}

impl EnvironmentSpec {
    pub fn new(n: usize, p: usize, outcome_form: OutcomeForm, r_bias: Option<f64>, seed: u64) -> Self {
        EnvironmentSpec {
            n,
            p,
            outcome_form,
            r_bias,
            vb_size: None,
            noise_std: DEFAULT_NOISE_STD,
            seed,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }

    pub fn with_vb_size(mut self, vb_size: usize) -> Self {
        self.vb_size = Some(vb_size);
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_r_bias(mut self, r_bias: Option<f64>) -> Self {
        self.r_bias = r_bias;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn p_s(&self) -> usize {
        self.p / 2
    }

    pub fn p_v(&self) -> usize {
        self.p / 2
    }

    pub fn biased_count(&self) -> usize {
        self.vb_size.unwrap_or_else(|| (self.p / 10).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CfrError::Config("n must be positive".into()));
        }
        if self.p < 4 || !self.p.is_multiple_of(2) {
            return Err(CfrError::Config(format!(
                "p must be an even integer >= 4, got {}",
                self.p
            )));
        }
        if let Some(r) = self.r_bias {
            validate_bias_rate(r)?;
        }
        if self.biased_count() > self.p_v() {
            return Err(CfrError::Config(format!(
                "vb_size {} exceeds the number of unstable features {}",
                self.biased_count(),
                self.p_v()
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CfrError::Config(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if self.outcome_form.has_interaction() && self.p_s() < 3 {
            return Err(CfrError::Config(format!(
                "outcome form {} needs at least 3 stable features",
                self.outcome_form
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let r = self
            .r_bias
            .map_or_else(|| "none".to_string(), |r| r.to_string());
        format!(
            "environment(n={}, p={}, form={}, r={}, vb_size={}, seed={})",
            self.n,
            self.p,
            self.outcome_form,
            r,
            self.biased_count(),
            self.seed
        )
    }
}

/// Valid bias rates satisfy `1 < |r| <= 3`.
pub fn validate_bias_rate(r: f64) -> Result<()> {
    if r.is_finite() && r.abs() > 1.0 && r.abs() <= 3.0 {
        Ok(())
    } else {
        Err(CfrError::InvalidBiasRate(r))
    }
}

/// Generated samples with their ground truth. Columns are `[S_1..S_ps, V_1..V_pv]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    beta_s: Vec<f64>,
    beta_v: Vec<f64>,
    stable_mask: Vec<bool>,
    spec: EnvironmentSpec,
    trace: Option<DMatrix<f64>>,
}

impl Dataset {
    /// Assembles a dataset, checking every shape invariant.
    pub fn from_parts(
        x: DMatrix<f64>,
        y: DVector<f64>,
        beta_s: Vec<f64>,
        beta_v: Vec<f64>,
        spec: EnvironmentSpec,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(CfrError::dim("dataset outcomes", n, y.len()));
        }
        if p != spec.p || n != spec.n {
            return Err(CfrError::Consistency(format!(
                "matrix is {n}x{p} but spec declares n={}, p={}",
                spec.n, spec.p
            )));
        }
        if beta_s.len() != spec.p_s() || beta_v.len() != spec.p_v() {
            return Err(CfrError::Consistency(format!(
                "coefficient lengths ({}, {}) do not match p_s = p_v = {}",
                beta_s.len(),
                beta_v.len(),
                spec.p_s()
            )));
        }
        let stable_mask = (0..p).map(|j| j < spec.p_s()).collect();
        Ok(Dataset {
            x,
            y,
            beta_s,
            beta_v,
            stable_mask,
            spec,
            trace: None,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta_s(&self) -> &[f64] {
        &self.beta_s
    }

    pub fn beta_v(&self) -> &[f64] {
        &self.beta_v
    }

    /// Full ground-truth coefficient vector `[beta_s, beta_v]`.
    pub fn beta_true(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.p(),
            self.beta_s.iter().chain(self.beta_v.iter()).copied(),
        )
    }

    pub fn stable_mask(&self) -> &[bool] {
        &self.stable_mask
    }

    pub fn unstable_indices(&self) -> Vec<usize> {
        (self.spec.p_s()..self.p()).collect()
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    /// Auxiliary `Z` draws of the accepted rows, when retained.
    pub fn trace(&self) -> Option<&DMatrix<f64>> {
        self.trace.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Stable columns of `X`.
    pub fn s(&self) -> DMatrix<f64> {
        self.x.columns(0, self.spec.p_s()).into_owned()
    }

    /// Unstable columns of `X`.
    pub fn v(&self) -> DMatrix<f64> {
        self.x.columns(self.spec.p_s(), self.spec.p_v()).into_owned()
    }

    /// Noiseless stable signal `f(S)` for every row.
    pub fn stable_signals(&self) -> Result<DVector<f64>> {
        let ps = self.spec.p_s();
        let mut out = DVector::zeros(self.n());
        for i in 0..self.n() {
            let row: Vec<f64> = (0..ps).map(|j| self.x[(i, j)]).collect();
            out[i] = stable_signal(&row, &self.beta_s, self.spec.outcome_form)?;
        }
        Ok(out)
    }
}

/// Acceptance weight of one candidate row.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeight {
    pub d: Vec<f64>,
    pub prob: f64,
}

/// Generation bookkeeping for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationStats {
    pub accepted: usize,
    pub candidates: u64,
}

/// The alternating coefficient pattern `1/3, -2/3, 1, -1/3, 2/3, -1`, repeated.
pub fn true_coefficients(p_s: usize) -> Vec<f64> {
    const CYCLE: [f64; 6] = [1.0 / 3.0, -2.0 / 3.0, 1.0, -1.0 / 3.0, 2.0 / 3.0, -1.0];
    (0..p_s).map(|i| CYCLE[i % CYCLE.len()]).collect()
}

/// Draws `(S, V, Z)` for `spec.n` rows without any selection.
pub fn generate_covariates(
    spec: &EnvironmentSpec,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let (n, p, ps, pv) = (spec.n, spec.p, spec.p_s(), spec.p_v());
    let mut s = DMatrix::zeros(n, ps);
    let mut v = DMatrix::zeros(n, pv);
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for k in 0..p {
            z[(i, k)] = rng.sample(StandardNormal);
        }
        for k in 0..pv {
            v[(i, k)] = rng.sample(StandardNormal);
        }
        for k in 0..ps {
            s[(i, k)] = 0.8 * z[(i, k)] + 0.2 * z[(i, k + 1)];
        }
    }
    Ok((s, v, z))
}

/// Noiseless `f(S)` for one row of stable features.
pub fn stable_signal(s_row: &[f64], beta_s: &[f64], form: OutcomeForm) -> Result<f64> {
    if s_row.len() != beta_s.len() {
        return Err(CfrError::dim("stable_signal", beta_s.len(), s_row.len()));
    }
    let linear: f64 = s_row.iter().zip(beta_s).map(|(s, b)| s * b).sum();
    if !form.has_interaction() {
        return Ok(linear);
    }
    if s_row.len() < 3 {
        return Err(CfrError::Config(format!(
            "outcome form {form} needs at least 3 stable features, got {}",
            s_row.len()
        )));
    }
    let product = s_row[0] * s_row[1] * s_row[2];
    Ok(match form {
        OutcomeForm::Poly => linear + product,
        OutcomeForm::Exp => linear + product.exp(),
        OutcomeForm::LinearOnly => unreachable!(),
    })
}

/// `Y = f(S) + V beta_v + eps` with `eps ~ N(0, noise_std^2)`.
pub fn generate_outcomes(
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    beta_s: &[f64],
    beta_v: &[f64],
    form: OutcomeForm,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let n = s.nrows();
    if v.nrows() != n {
        return Err(CfrError::dim("generate_outcomes rows", n, v.nrows()));
    }
    if s.ncols() != beta_s.len() {
        return Err(CfrError::dim("generate_outcomes beta_s", s.ncols(), beta_s.len()));
    }
    if v.ncols() != beta_v.len() {
        return Err(CfrError::dim("generate_outcomes beta_v", v.ncols(), beta_v.len()));
    }
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; s.ncols()];
    for i in 0..n {
        for (k, r) in row.iter_mut().enumerate() {
            *r = s[(i, k)];
        }
        let unstable: f64 = (0..v.ncols()).map(|k| v[(i, k)] * beta_v[k]).sum();
        let eps: f64 = rng.sample(StandardNormal);
        y[i] = stable_signal(&row, beta_s, form)? + unstable + noise_std * eps;
    }
    Ok(y)
}

/// Selection probability of a row with signal `f_s` and biased features `v_b`.
pub fn selection_probability(f_s: f64, v_b: &[f64], r: f64) -> Result<SelectionWeight> {
    if !(r.is_finite() && r.abs() > 1.0) {
        return Err(CfrError::InvalidBiasRate(r));
    }
    let sign = if r > 0.0 { 1.0 } else { -1.0 };
    let base = r.abs();
    let d: Vec<f64> = v_b.iter().map(|v| (f_s - sign * v).abs()).collect();
    let prob = d.iter().map(|di| base.powf(-5.0 * di)).product();
    Ok(SelectionWeight { d, prob })
}

pub fn generate_environment(spec: &EnvironmentSpec, rng: &mut impl Rng) -> Result<Dataset> {
    generate_with(spec, rng, false).map(|(ds, _)| ds)
}

/// Same as [`generate_environment`], retaining the `Z` draws and the candidate count.
pub fn generate_environment_traced(
    spec: &EnvironmentSpec,
    rng: &mut impl Rng,
) -> Result<(Dataset, GenerationStats)> {
    generate_with(spec, rng, true)
}

/// Generates from `spec` with a stream seeded by `spec.seed`.
pub fn generate_from_seed(spec: &EnvironmentSpec) -> Result<Dataset> {
    generate_environment(spec, &mut rng_from_seed(spec.seed))
}

/// [`generate_from_seed`] plus the accepted/candidate counts.
pub fn generate_from_seed_with_stats(spec: &EnvironmentSpec) -> Result<(Dataset, GenerationStats)> {
    generate_with(spec, &mut rng_from_seed(spec.seed), false)
}

fn generate_with(
    spec: &EnvironmentSpec,
    rng: &mut impl Rng,
    keep_trace: bool,
) -> Result<(Dataset, GenerationStats)> {
    spec.validate()?;
    let beta_s = true_coefficients(spec.p_s());
    let beta_v = vec![0.0; spec.p_v()];

    let (x, y, z, stats) = match spec.r_bias {
        None => {
            let (s, v, z) = generate_covariates(spec, rng)?;
            let y = generate_outcomes(&s, &v, &beta_s, &beta_v, spec.outcome_form, spec.noise_std, rng)?;
            let mut x = DMatrix::zeros(spec.n, spec.p);
            x.columns_mut(0, spec.p_s()).copy_from(&s);
            x.columns_mut(spec.p_s(), spec.p_v()).copy_from(&v);
            let stats = GenerationStats {
                accepted: spec.n,
                candidates: spec.n as u64,
            };
            (x, y, z, stats)
        }
        Some(r) => rejection_sample(spec, r, &beta_s, &beta_v, rng)?,
    };

    let mut ds = Dataset::from_parts(x, y, beta_s, beta_v, spec.clone())?;
    if keep_trace {
        ds.trace = Some(z);
    }
    Ok((ds, stats))
}

type Sampled = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, GenerationStats);

// Draws only what the acceptance test needs (Z[..=p_s], V_b, u) before deciding;
// the remaining columns and the noise are drawn for accepted rows only. They are
// independent of the decision, so the accepted rows keep the target distribution.
fn rejection_sample(
    spec: &EnvironmentSpec,
    r: f64,
    beta_s: &[f64],
    beta_v: &[f64],
    rng: &mut impl Rng,
) -> Result<Sampled> {
    let (n, p, ps, pv) = (spec.n, spec.p, spec.p_s(), spec.p_v());
    let vb = spec.biased_count();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut z_out = DMatrix::zeros(n, p);

    let mut z = vec![0.0; p];
    let mut s = vec![0.0; ps];
    let mut v = vec![0.0; pv];
    let mut accepted = 0usize;
    let mut drawn = 0u64;

    while accepted < n {
        if drawn >= spec.max_candidates {
            return Err(CfrError::GenerationStalled {
                spec: spec.describe(),
                drawn,
                accepted,
                requested: n,
            });
        }
        drawn += 1;
        for zk in z.iter_mut().take(ps + 1) {
            *zk = rng.sample(StandardNormal);
        }
        for k in 0..ps {
            s[k] = 0.8 * z[k] + 0.2 * z[k + 1];
        }
        let f_s = stable_signal(&s, beta_s, spec.outcome_form)?;
        for vk in v.iter_mut().take(vb) {
            *vk = rng.sample(StandardNormal);
        }
        let weight = selection_probability(f_s, &v[..vb], r)?;
        let u: f64 = rng.random();
        if u >= weight.prob {
            continue;
        }
        for zk in z.iter_mut().skip(ps + 1) {
            *zk = rng.sample(StandardNormal);
        }
        for vk in v.iter_mut().skip(vb) {
            *vk = rng.sample(StandardNormal);
        }
        let eps: f64 = rng.sample(StandardNormal);
        let unstable: f64 = v.iter().zip(beta_v).map(|(a, b)| a * b).sum();

        let i = accepted;
        for k in 0..ps {
            x[(i, k)] = s[k];
        }
        for k in 0..pv {
            x[(i, ps + k)] = v[k];
        }
        for k in 0..p {
            z_out[(i, k)] = z[k];
        }
        y[i] = f_s + unstable + spec.noise_std * eps;
        accepted += 1;
    }

    Ok((
        x,
        y,
        z_out,
        GenerationStats {
            accepted,
            candidates: drawn,
        },
    ))
}

//! Rectified linear regression: `y_hat = X (I + W) beta`, with `W` and `beta`
//! updated alternately by gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::datagen::Dataset;
use crate::error::{CfrError, Result};
use crate::rectifier::{
    init_weights, reconstruction_grad_with, reconstruction_loss_with, sgd_step_w, InitScheme,
    RectifierWeights, ReconstructionNorm,
};

/// Objective the `W` step descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WUpdateLoss {
    /// Reconstruction loss only.
    #[default]
    ReconstructionOnly,
    /// Reconstruction loss plus the prediction loss through `W`.
    Joint,
}

/// How per-batch sums are turned into step directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScale {
    Sum,
    /// Divide summed gradients by the batch size.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// One `W` step then one `beta` step on every mini-batch.
    #[default]
    PerBatch,
    /// A pass of `W` steps over all batches, then a pass of `beta` steps.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_w: f64,
    pub lr_beta: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub w_update_loss: WUpdateLoss,
    /// Relative change of both losses that ends training early.
    pub convergence_tol: f64,
    pub grad_scale: GradScale,
    pub alternation: Alternation,
    pub init: InitScheme,
    pub norm: ReconstructionNorm,
    /// Center features before computing the reconstruction loss.
    pub center: bool,
    /// Learn an unrectified intercept alongside `beta`.
    pub fit_intercept: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_w: 0.005,
            lr_beta: 0.001,
            epochs: 100,
            batch_size: None,
            seed: 47,
            w_update_loss: WUpdateLoss::ReconstructionOnly,
            convergence_tol: 1e-8,
            grad_scale: GradScale::Mean,
            alternation: Alternation::PerBatch,
            init: InitScheme::Zeros,
            norm: ReconstructionNorm::SquaredL2,
            center: false,
            fit_intercept: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_w", self.lr_w), ("lr_beta", self.lr_beta)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(CfrError::Config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if self.epochs == 0 {
            return Err(CfrError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(CfrError::Config("batch_size must be positive".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(CfrError::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub reconstruction: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrModel {
    pub beta: Vec<f64>,
    pub weights: RectifierWeights,
    #[serde(default)]
    pub intercept: Option<f64>,
    pub history: Vec<EpochLosses>,
    pub config: TrainConfig,
}

impl CfrModel {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = cfr_predict(x, &self.weights, &DVector::from_column_slice(&self.beta))?;
        if let Some(b0) = self.intercept {
            out.add_scalar_mut(b0);
        }
        Ok(out)
    }
}

fn check_beta(context: &'static str, x: &DMatrix<f64>, w: &RectifierWeights, beta: &DVector<f64>) -> Result<()> {
    if x.ncols() != w.p() {
        return Err(CfrError::dim(context, w.p(), x.ncols()));
    }
    if beta.len() != w.p() {
        return Err(CfrError::dim(context, w.p(), beta.len()));
    }
    Ok(())
}

/// `X (I + W) beta`.
pub fn cfr_predict(x: &DMatrix<f64>, w: &RectifierWeights, beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_beta("cfr_predict", x, w, beta)?;
    Ok((x * w.augmented()) * beta)
}

/// Residual sum of squares of [`cfr_predict`].
pub fn cfr_loss(x: &DMatrix<f64>, y: &DVector<f64>, w: &RectifierWeights, beta: &DVector<f64>) -> Result<f64> {
    check_xy("cfr_loss", x, y)?;
    let pred = cfr_predict(x, w, beta)?;
    Ok(residual_sum_of_squares(y, &pred))
}

pub(crate) fn residual_sum_of_squares(y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    y.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `-2 (X (I + W))^T (Y - X (I + W) beta)`.
pub fn cfr_grad_beta(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &RectifierWeights,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_xy("cfr_grad_beta", x, y)?;
    check_beta("cfr_grad_beta", x, w, beta)?;
    let xm = x * w.augmented();
    let resid = y - &xm * beta;
    Ok(xm.tr_mul(&resid) * -2.0)
}

/// Gradient of the prediction loss with respect to `W`: `-2 X^T r beta^T`, zero diagonal.
pub fn cfr_grad_w(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &RectifierWeights,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_xy("cfr_grad_w", x, y)?;
    check_beta("cfr_grad_w", x, w, beta)?;
    let resid = y - cfr_predict(x, w, beta)?;
    let mut g = (x.tr_mul(&resid) * beta.transpose()) * -2.0;
    g.fill_diagonal(0.0);
    Ok(g)
}

struct Trainer<'a> {
    x: &'a DMatrix<f64>,
    x_rec: DMatrix<f64>,
    y: &'a DVector<f64>,
    cfg: &'a TrainConfig,
    w: RectifierWeights,
    beta: DVector<f64>,
    intercept: f64,
}

impl Trainer<'_> {
    fn scale(&self, rows: usize) -> f64 {
        match self.cfg.grad_scale {
            GradScale::Sum => 1.0,
            GradScale::Mean => 1.0 / rows as f64,
        }
    }

    fn diverged(&self, epoch: usize, detail: impl Into<String>) -> CfrError {
        CfrError::Divergence {
            epoch,
            lr_w: self.cfg.lr_w,
            lr_model: self.cfg.lr_beta,
            detail: detail.into(),
        }
    }

    fn step_w(&mut self, rows: &[usize], epoch: usize) -> Result<()> {
        let xb_rec = self.x_rec.select_rows(rows);
        let mut g = reconstruction_grad_with(&xb_rec, &self.w, self.cfg.norm)?;
        if self.cfg.w_update_loss == WUpdateLoss::Joint {
            let xb = self.x.select_rows(rows);
            let yb = self.target(rows);
            g += cfr_grad_w(&xb, &yb, &self.w, &self.beta)?;
        }
        g *= self.scale(rows.len());
        self.w = sgd_step_w(&self.w, &g, self.cfg.lr_w).map_err(|e| match e {
            CfrError::Divergence { detail, .. } => self.diverged(epoch, detail),
            other => other,
        })?;
        Ok(())
    }

    // Targets with the current intercept removed.
    fn target(&self, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i] - self.intercept))
    }

    fn step_beta(&mut self, rows: &[usize], epoch: usize) -> Result<()> {
        let xb = self.x.select_rows(rows);
        let yb = self.target(rows);
        let scale = self.scale(rows.len());
        let g = cfr_grad_beta(&xb, &yb, &self.w, &self.beta)? * scale;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(epoch, "non-finite beta gradient"));
        }
        if self.cfg.fit_intercept {
            let resid = &yb - cfr_predict(&xb, &self.w, &self.beta)?;
            self.intercept -= self.cfg.lr_beta * (-2.0 * resid.sum()) * scale;
        }
        self.beta -= g * self.cfg.lr_beta;
        Ok(())
    }

    fn losses(&self) -> Result<EpochLosses> {
        let reconstruction = reconstruction_loss_with(&self.x_rec, &self.w, self.cfg.norm)?;
        let mut pred = cfr_predict(self.x, &self.w, &self.beta)?;
        if self.cfg.fit_intercept {
            pred.add_scalar_mut(self.intercept);
        }
        let prediction = residual_sum_of_squares(self.y, &pred);
        Ok(EpochLosses {
            reconstruction,
            prediction,
        })
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let denom = prev.abs().max(f64::MIN_POSITIVE);
    (cur - prev).abs() / denom
}

fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Trains on a generated dataset.
pub fn train_cfr(ds: &Dataset, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<CfrModel> {
    train_cfr_xy(ds.x(), ds.y(), cfg, rng)
}

/// Alternating optimisation of `W` (fixing `beta`) and `beta` (fixing the freshest `W`).
pub fn train_cfr_xy(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<CfrModel> {
    check_xy("train_cfr", x, y)?;
    cfg.validate()?;
    let (n, p) = x.shape();
    let w = init_weights(p, cfg.init, rng)?;
    let x_rec = if cfg.center { center_columns(x) } else { x.clone() };
    let mut t = Trainer {
        x,
        x_rec,
        y,
        cfg,
        w,
        beta: DVector::zeros(p),
        intercept: 0.0,
    };

    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history: Vec<EpochLosses> = Vec::with_capacity(cfg.epochs);
    let mut prev = t.losses()?;

    for epoch in 1..=cfg.epochs {
        if batch < n {
            order.shuffle(rng);
        }
        let batches: Vec<&[usize]> = order.chunks(batch).collect();
        match cfg.alternation {
            Alternation::PerBatch => {
                for rows in &batches {
                    t.step_w(rows, epoch)?;
                    t.step_beta(rows, epoch)?;
                }
            }
            Alternation::PerEpoch => {
                for rows in &batches {
                    t.step_w(rows, epoch)?;
                }
                for rows in &batches {
                    t.step_beta(rows, epoch)?;
                }
            }
        }
        let cur = t.losses()?;
        if !(cur.reconstruction.is_finite() && cur.prediction.is_finite()) {
            return Err(t.diverged(epoch, format!(
                "non-finite loss (reconstruction {}, prediction {})",
                cur.reconstruction, cur.prediction
            )));
        }
        history.push(cur);
        let done = relative_change(prev.reconstruction, cur.reconstruction) < cfg.convergence_tol
            && relative_change(prev.prediction, cur.prediction) < cfg.convergence_tol;
        prev = cur;
        if done {
            break;
        }
    }

    Ok(CfrModel {
        beta: t.beta.iter().copied().collect(),
        weights: t.w,
        intercept: cfg.fit_intercept.then_some(t.intercept),
        history,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_from_seed, rng_from_seed, EnvironmentSpec, OutcomeForm};
    use crate::regressors::ols_fit;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_weights(p: usize, seed: u64) -> RectifierWeights {
        let mut m = random_matrix(p, p, seed) * 0.3;
        m.fill_diagonal(0.0);
        RectifierWeights::from_matrix(m).unwrap()
    }

    fn random_instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, RectifierWeights, DVector<f64>) {
        let x = random_matrix(n, p, seed);
        let y = random_matrix(n, 1, seed + 1).column(0).into_owned();
        let w = random_weights(p, seed + 2);
        let beta = random_matrix(p, 1, seed + 3).column(0).into_owned();
        (x, y, w, beta)
    }

    #[test]
    fn predict_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let w = RectifierWeights::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let beta = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(cfr_predict(&x, &w, &beta).unwrap()[0], 4.0);
        let zero = RectifierWeights::zeros(2);
        assert_eq!(cfr_predict(&x, &zero, &beta).unwrap(), &x * &beta);
    }

    #[test]
    fn loss_matches_per_sample_loop() {
        let (x, y, w, beta) = random_instance(5, 3, 1);
        let mut brute = 0.0;
        for i in 0..5 {
            let mut pred = 0.0;
            for k in 0..3 {
                let mut rect = 0.0;
                for j in 0..3 {
                    rect += x[(i, j)] * w.matrix()[(j, k)];
                }
                pred += rect * beta[k] + x[(i, k)] * beta[k];
            }
            brute += (y[i] - pred).powi(2);
        }
        assert_abs_diff_eq!(cfr_loss(&x, &y, &w, &beta).unwrap(), brute, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_reduce_to_ols_residuals() {
        let (x, y, _, beta) = random_instance(7, 4, 2);
        let zero = RectifierWeights::zeros(4);
        let plain = &x * &beta;
        let rss = residual_sum_of_squares(&y, &plain);
        assert_eq!(cfr_loss(&x, &y, &zero, &beta).unwrap(), rss);
        let g = cfr_grad_beta(&x, &y, &zero, &beta).unwrap();
        let ols_g = x.tr_mul(&(&y - &plain)) * -2.0;
        assert_eq!(g, ols_g);
    }

    #[test]
    fn grad_beta_zero_at_perfect_fit() {
        let (x, _, w, beta) = random_instance(6, 4, 3);
        let y = cfr_predict(&x, &w, &beta).unwrap();
        assert_eq!(cfr_loss(&x, &y, &w, &beta).unwrap(), 0.0);
        assert!(cfr_grad_beta(&x, &y, &w, &beta).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    fn max_rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn grad_beta_matches_central_differences() {
        for seed in 0..5 {
            let (x, y, w, beta) = random_instance(6, 4, 10 * seed + 5);
            let g = cfr_grad_beta(&x, &y, &w, &beta).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut bp = beta.clone();
                bp[k] += h;
                let mut bm = beta.clone();
                bm[k] -= h;
                let fd = (cfr_loss(&x, &y, &w, &bp).unwrap() - cfr_loss(&x, &y, &w, &bm).unwrap()) / (2.0 * h);
                assert!(max_rel(fd, g[k]) < 1e-6, "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn grad_w_matches_central_differences() {
        let (x, y, w, beta) = random_instance(6, 4, 77);
        let g = cfr_grad_w(&x, &y, &w, &beta).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            for k in 0..4 {
                if j == k {
                    assert_eq!(g[(j, k)], 0.0);
                    continue;
                }
                let mut wp = w.matrix().clone();
                wp[(j, k)] += h;
                let mut wm = w.matrix().clone();
                wm[(j, k)] -= h;
                let lp = cfr_loss(&x, &y, &RectifierWeights::from_matrix(wp).unwrap(), &beta).unwrap();
                let lm = cfr_loss(&x, &y, &RectifierWeights::from_matrix(wm).unwrap(), &beta).unwrap();
                assert!(max_rel((lp - lm) / (2.0 * h), g[(j, k)]) < 1e-6);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(CfrError::Config(_))));
        assert!(TrainConfig {
            lr_w: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: Some(0),
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        let json = r#"{"lr_w": 0.01, "typo": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr_w, 0.005);
        assert_eq!(cfg.lr_beta, 0.001);
        assert_eq!(cfg.seed, 47);
    }

    #[test]
    fn zero_rates_leave_parameters_untouched() {
        let spec = EnvironmentSpec::new(200, 6, OutcomeForm::Poly, Some(1.7), 3);
        let ds = generate_from_seed(&spec).unwrap();
        let cfg = TrainConfig {
            lr_w: 0.0,
            lr_beta: 0.0,
            epochs: 5,
            init: InitScheme::UniformSmall,
            ..TrainConfig::default()
        };
        let model = train_cfr(&ds, &cfg, &mut rng_from_seed(1)).unwrap();
        let init = init_weights(6, InitScheme::UniformSmall, &mut rng_from_seed(1)).unwrap();
        assert_eq!(model.weights, init);
        assert!(model.beta.iter().all(|&b| b == 0.0));
        assert!(model.history.len() <= 5);
    }

    #[test]
    fn full_batch_prediction_loss_is_non_increasing() {
        for (form, r) in [(OutcomeForm::LinearOnly, None), (OutcomeForm::Poly, Some(1.7))] {
            let spec = EnvironmentSpec::new(2000, 10, form, r, 11);
            let ds = generate_from_seed(&spec).unwrap();
            let model = train_cfr(&ds, &TrainConfig::default(), &mut rng_from_seed(47)).unwrap();
            assert_eq!(model.history.len(), 100);
            for pair in model.history.windows(2) {
                assert!(pair[1].prediction <= pair[0].prediction + 1e-9, "{pair:?}");
            }
        }
    }

    #[test]
    fn converged_training_reproduces_least_squares_predictions() {
        // Once beta converges, X (I + W) beta is the least-squares fit on the
        // rectified design, which spans the same column space as X.
        let spec = EnvironmentSpec::new(2000, 10, OutcomeForm::LinearOnly, None, 5);
        let ds = generate_from_seed(&spec).unwrap();
        let cfg = TrainConfig {
            lr_w: 0.05,
            lr_beta: 0.05,
            epochs: 20_000,
            convergence_tol: 1e-14,
            ..TrainConfig::default()
        };
        let model = train_cfr(&ds, &cfg, &mut rng_from_seed(47)).unwrap();
        let ols = ols_fit(ds.x(), ds.y()).unwrap();
        let a = model.predict(ds.x()).unwrap();
        let b = ols.predict(ds.x()).unwrap();
        let max_gap = (a - b).amax();
        assert!(max_gap < 1e-3, "max prediction gap {max_gap}");
    }

    #[test]
    fn frozen_rectifier_recovers_true_coefficients() {
        let spec = EnvironmentSpec::new(2000, 10, OutcomeForm::LinearOnly, None, 6);
        let ds = generate_from_seed(&spec).unwrap();
        let cfg = TrainConfig {
            lr_w: 0.0,
            lr_beta: 0.1,
            epochs: 2000,
            ..TrainConfig::default()
        };
        let model = train_cfr(&ds, &cfg, &mut rng_from_seed(47)).unwrap();
        let truth = ds.beta_true();
        let worst = model
            .beta
            .iter()
            .zip(truth.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "L-inf distance {worst}");
    }

    #[test]
    fn mini_batches_and_options_train() {
        let spec = EnvironmentSpec::new(500, 8, OutcomeForm::Poly, Some(-2.0), 8);
        let ds = generate_from_seed(&spec).unwrap();
        for cfg in [
            TrainConfig {
                batch_size: Some(64),
                epochs: 5,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: Some(100),
                epochs: 5,
                alternation: Alternation::PerEpoch,
                w_update_loss: WUpdateLoss::Joint,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 5,
                center: true,
                fit_intercept: true,
                norm: ReconstructionNorm::L1,
                ..TrainConfig::default()
            },
        ] {
            let model = train_cfr(&ds, &cfg, &mut rng_from_seed(1)).unwrap();
            assert!(model.beta.iter().all(|b| b.is_finite()));
            assert_eq!(model.intercept.is_some(), cfg.fit_intercept);
            assert!(model.history.len() == 5);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let spec = EnvironmentSpec::new(500, 8, OutcomeForm::Poly, Some(1.7), 9);
        let ds = generate_from_seed(&spec).unwrap();
        let cfg = TrainConfig {
            grad_scale: GradScale::Sum,
            lr_w: 0.5,
            epochs: 200,
            ..TrainConfig::default()
        };
        match train_cfr(&ds, &cfg, &mut rng_from_seed(1)) {
            Err(CfrError::Divergence { epoch, lr_w, .. }) => {
                assert!(epoch >= 1);
                assert_eq!(lr_w, 0.5);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = EnvironmentSpec::new(300, 6, OutcomeForm::Poly, Some(1.7), 10);
        let ds = generate_from_seed(&spec).unwrap();
        let cfg = TrainConfig {
            batch_size: Some(32),
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train_cfr(&ds, &cfg, &mut rng_from_seed(5)).unwrap();
        let b = train_cfr(&ds, &cfg, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn prediction_equals_plain_product_on_rectified_design(seed in 0u64..500) {
            let (x, _, w, beta) = random_instance(5, 4, seed);
            let direct = cfr_predict(&x, &w, &beta).unwrap();
            let split = (&x * w.matrix()) * &beta + &x * &beta;
            prop_assert!((direct - split).amax() <= 1e-12);
        }
    }
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_xy, LinearModel, Method};
use crate::error::{CfrError, Result};

// Relative threshold on |R_ii| below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Least squares via a thin QR factorization of `X`.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel> {
    let beta = lstsq_qr(x, y, "ols_fit")?;
    Ok(LinearModel {
        method: Method::Ols,
        beta: beta.iter().copied().collect(),
        intercept: None,
        regularization: None,
        warning: None,
    })
}

pub(crate) fn lstsq_qr(x: &DMatrix<f64>, y: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    check_xy(context, x, y)?;
    let (n, p) = x.shape();
    if n < p {
        return Err(CfrError::Singular(format!(
            "{context}: {n} samples cannot determine {p} coefficients"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(i) = (0..p).find(|&i| r[(i, i)].abs() <= RANK_TOL * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(CfrError::Singular(format!(
            "{context}: design matrix is rank deficient (column {} is dependent on earlier columns)",
            i + 1
        )));
    }
    let qty = qr.q().tr_mul(y);
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| CfrError::Singular(format!("{context}: triangular solve failed")))
}

/// Solves `(X^T X + lambda I) beta = X^T Y` by Cholesky.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy("ridge_fit", x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CfrError::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    let p = x.ncols();
    let mut a = x.tr_mul(x);
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let rhs = x.tr_mul(y);
    let chol = a
        .cholesky()
        .ok_or_else(|| CfrError::Singular("ridge_fit: X^T X + lambda I is not positive definite".into()))?;
    let beta = chol.solve(&rhs);
    Ok(LinearModel {
        method: Method::Ridge,
        beta: beta.iter().copied().collect(),
        intercept: None,
        regularization: Some(lambda),
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoParams {
    pub lambda: f64,
    #[serde(default = "LassoParams::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "LassoParams::default_tol")]
    pub tol: f64,
}

impl LassoParams {
    fn default_max_iter() -> usize {
        10_000
    }

    fn default_tol() -> f64 {
        1e-10
    }

    pub fn new(lambda: f64) -> Self {
        LassoParams {
            lambda,
            max_iter: Self::default_max_iter(),
            tol: Self::default_tol(),
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `||Y - X beta||^2 + lambda ||beta||_1`.
///
/// Stops when a full sweep moves no coefficient by more than `tol`. Hitting
/// `max_iter` sweeps first leaves a warning on the returned model.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, params: LassoParams) -> Result<LinearModel> {
    check_xy("lasso_fit", x, y)?;
    let LassoParams { lambda, max_iter, tol } = params;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CfrError::Config(format!("lasso lambda must be finite and >= 0, got {lambda}")));
    }
    let (n, p) = x.shape();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = vec![0.0; p];
    let mut resid = y.clone();
    let half = lambda / 2.0;
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < max_iter {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let rho = col.dot(&resid) + col_sq[j] * beta[j];
            let next = soft_threshold(rho, half) / col_sq[j];
            let delta = next - beta[j];
            if delta != 0.0 {
                for i in 0..n {
                    resid[i] -= col[i] * delta;
                }
                beta[j] = next;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if !max_delta.is_finite() {
            return Err(CfrError::Divergence {
                epoch: sweeps,
                lr_w: f64::NAN,
                lr_model: f64::NAN,
                detail: "lasso coordinate descent produced non-finite coefficients".into(),
            });
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }

    Ok(LinearModel {
        method: Method::Lasso,
        beta,
        intercept: None,
        regularization: Some(lambda),
        warning: (!converged).then(|| {
            format!("lasso did not reach tol {tol} within {max_iter} sweeps")
        }),
    })
}

/// Sample-reweighting baseline: learn nonnegative sample weights (mean 1) that
/// shrink all weighted pairwise feature covariances, then fit weighted least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwrParams {
    #[serde(default = "DwrParams::default_lr")]
    pub lr: f64,
    #[serde(default = "DwrParams::default_iterations")]
    pub iterations: usize,
}

impl DwrParams {
    fn default_lr() -> f64 {
        0.005
    }

    fn default_iterations() -> usize {
        2000
    }
}

impl Default for DwrParams {
    fn default() -> Self {
        DwrParams {
            lr: Self::default_lr(),
            iterations: Self::default_iterations(),
        }
    }
}

/// Weighted covariance matrix with weights normalised to mean 1.
pub(crate) fn weighted_covariance(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            mean[j] += w[i] * x[(i, j)];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for j in 0..p {
            let a = w[i] * x[(i, j)];
            for k in j..p {
                cov[(j, k)] += a * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in j..p {
            let v = cov[(j, k)] / nf - mean[j] * mean[k];
            cov[(j, k)] = v;
            cov[(k, j)] = v;
        }
    }
    cov
}

/// Sum of squared off-diagonal weighted covariances over feature pairs `j < k`.
pub fn decorrelation_objective(x: &DMatrix<f64>, w: &[f64]) -> f64 {
    let cov = weighted_covariance(x, w);
    let p = cov.nrows();
    let mut total = 0.0;
    for j in 0..p {
        for k in (j + 1)..p {
            total += cov[(j, k)] * cov[(j, k)];
        }
    }
    total
}

fn project_weights(w: &mut [f64]) -> Result<()> {
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(CfrError::Divergence {
            epoch: 0,
            lr_w: f64::NAN,
            lr_model: f64::NAN,
            detail: format!("sample weights collapsed (mean {mean})"),
        });
    }
    w.iter_mut().for_each(|v| *v /= mean);
    Ok(())
}

pub fn dwr_fit(x: &DMatrix<f64>, y: &DVector<f64>, params: DwrParams) -> Result<(LinearModel, Vec<f64>)> {
    check_xy("dwr_fit", x, y)?;
    let (n, p) = x.shape();
    if n < p {
        return Err(CfrError::Singular(format!("dwr_fit: {n} samples for {p} features")));
    }
    if !(params.lr >= 0.0 && params.lr.is_finite()) {
        return Err(CfrError::Config(format!("dwr lr must be finite and >= 0, got {}", params.lr)));
    }
    let mut w = vec![1.0; n];
    let nf = n as f64;
    let mut xi = DVector::zeros(p);
    for it in 0..params.iterations {
        let mut cov = weighted_covariance(x, &w);
        cov.fill_diagonal(0.0);
        let mut mean = DVector::zeros(p);
        for i in 0..n {
            for j in 0..p {
                mean[j] += w[i] * x[(i, j)];
            }
        }
        mean /= nf;
        // n * dJ/dw_i = (x_i - 2 m)^T C x_i
        let mut next = w.clone();
        for i in 0..n {
            for j in 0..p {
                xi[j] = x[(i, j)];
            }
            let cx = &cov * &xi;
            let g = (&xi - &mean * 2.0).dot(&cx);
            next[i] -= params.lr * g;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(CfrError::Divergence {
                epoch: it + 1,
                lr_w: params.lr,
                lr_model: f64::NAN,
                detail: "sample-weight update became non-finite".into(),
            });
        }
        project_weights(&mut next)?;
        w = next;
    }

    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sqrt_w[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sqrt_w[i]);
    let beta = lstsq_qr(&xw, &yw, "dwr_fit")?;
    let model = LinearModel {
        method: Method::DwrLike,
        beta: beta.iter().copied().collect(),
        intercept: None,
        regularization: None,
        warning: None,
    };
    Ok((model, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_xy(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        (x, y)
    }

    // Gaussian elimination with partial pivoting on the normal equations.
    fn normal_equation_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Vec<f64> {
        let p = x.ncols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for j in 0..p {
            for k in 0..p {
                a[j][k] = (0..x.nrows()).map(|i| x[(i, j)] * x[(i, k)]).sum::<f64>();
            }
            a[j][j] += lambda;
            a[j][p] = (0..x.nrows()).map(|i| x[(i, j)] * y[i]).sum::<f64>();
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&r1, &r2| a[r1][c].abs().total_cmp(&a[r2][c].abs())).unwrap();
            a.swap(c, piv);
            for r in (c + 1)..p {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut b = vec![0.0; p];
        for r in (0..p).rev() {
            let s: f64 = ((r + 1)..p).map(|k| a[r][k] * b[k]).sum();
            b[r] = (a[r][p] - s) / a[r][r];
        }
        b
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let (x, _) = random_xy(30, 4, 1);
        let truth = DVector::from_vec(vec![1.5, -0.25, 0.0, 3.0]);
        let y = &x * &truth;
        let m = ols_fit(&x, &y).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(m.beta[j], truth[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn ols_matches_normal_equations() {
        for seed in 0..10 {
            let (x, y) = random_xy(20, 4, 100 + seed);
            let m = ols_fit(&x, &y).unwrap();
            let oracle = normal_equation_solve(&x, &y, 0.0);
            for j in 0..4 {
                assert_abs_diff_eq!(m.beta[j], oracle[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ols_rejects_duplicated_column() {
        let (mut x, y) = random_xy(20, 4, 7);
        let c0 = x.column(0).into_owned();
        x.set_column(3, &c0);
        assert!(matches!(ols_fit(&x, &y), Err(CfrError::Singular(_))));
        let (x, y) = random_xy(3, 4, 8);
        assert!(matches!(ols_fit(&x, &y), Err(CfrError::Singular(_))));
    }

    #[test]
    fn ridge_matches_oracle_and_ols() {
        let (x, y) = random_xy(25, 5, 9);
        let ols = ols_fit(&x, &y).unwrap();
        let r0 = ridge_fit(&x, &y, 0.0).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(r0.beta[j], ols.beta[j], epsilon = 1e-10);
        }
        let r = ridge_fit(&x, &y, 3.5).unwrap();
        let oracle = normal_equation_solve(&x, &y, 3.5);
        for j in 0..5 {
            assert_abs_diff_eq!(r.beta[j], oracle[j], epsilon = 1e-10);
        }
        assert!(ridge_fit(&x, &y, -1.0).is_err());
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda() {
        let (x, y) = random_xy(25, 5, 10);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0, 1e4, 1e8] {
            let b = DVector::from_vec(ridge_fit(&x, &y, lambda).unwrap().beta);
            assert!(b.norm() < prev);
            prev = b.norm();
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn lasso_penalty_off_matches_ols() {
        let (x, y) = random_xy(40, 5, 11);
        let ols = ols_fit(&x, &y).unwrap();
        let l = lasso_fit(&x, &y, LassoParams::new(0.0)).unwrap();
        assert!(l.warning.is_none());
        for j in 0..5 {
            assert_abs_diff_eq!(l.beta[j], ols.beta[j], epsilon = 1e-4);
        }
    }

    #[test]
    fn lasso_zero_above_lambda_max() {
        let (x, y) = random_xy(40, 5, 12);
        let lambda_max = 2.0 * x.tr_mul(&y).amax();
        let l = lasso_fit(&x, &y, LassoParams::new(lambda_max * 1.0001)).unwrap();
        assert!(l.beta.iter().all(|&b| b == 0.0));
        let l = lasso_fit(&x, &y, LassoParams::new(lambda_max * 0.9)).unwrap();
        assert!(l.beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn lasso_single_feature_closed_form() {
        let (x, y) = random_xy(30, 1, 13);
        let xx = x.column(0).norm_squared();
        let xy = x.column(0).dot(&y);
        for lambda in [0.0, 0.5, 2.0, 2.0 * xy.abs() + 1.0] {
            let expected = soft_threshold(xy, lambda / 2.0) / xx;
            let l = lasso_fit(&x, &y, LassoParams::new(lambda)).unwrap();
            assert_abs_diff_eq!(l.beta[0], expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let (x, y) = random_xy(40, 5, 14);
        let params = LassoParams {
            lambda: 0.0,
            max_iter: 1,
            tol: 1e-300,
        };
        let l = lasso_fit(&x, &y, params).unwrap();
        assert!(l.warning.is_some());
    }

    #[test]
    fn dwr_uncorrelated_features_stay_near_uniform() {
        // columns orthogonal with zero mean: the objective is already zero
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 0.5, -1.0]);
        let (m, w) = dwr_fit(&x, &y, DwrParams::default()).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let ols = ols_fit(&x, &y).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(m.beta[j], ols.beta[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn dwr_reduces_weighted_covariances() {
        let mut rng = rng_from_seed(15);
        let n = 200;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = x.clone();
        for i in 0..n {
            x[(i, 1)] = 0.7 * x[(i, 0)] + 0.5 * x[(i, 1)];
            x[(i, 3)] = -0.5 * x[(i, 2)] + 0.8 * x[(i, 3)];
        }
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - x[(i, 2)]);
        let before = decorrelation_objective(&x, &vec![1.0; n]);
        let (_, w) = dwr_fit(&x, &y, DwrParams::default()).unwrap();
        let after = decorrelation_objective(&x, &w);
        assert!(after < 0.5 * before, "before {before}, after {after}");
        assert!(w.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(w.iter().sum::<f64>() / n as f64, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dwr_weights_respect_constraints_every_step() {
        let (x, y) = random_xy(60, 3, 16);
        for iterations in [1, 5, 50] {
            let (_, w) = dwr_fit(&x, &y, DwrParams { lr: 0.05, iterations }).unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(w.iter().sum::<f64>() / 60.0, 1.0, epsilon = 1e-12);
        }
    }
}

//! Evaluation quantities: RMSE, coefficient error, AE/SE across environments, accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{CfrError, Result};

/// RMSE values for one test bias rate, one entry per repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvResult {
    pub r_test: f64,
    pub rmse_values: Vec<f64>,
}

impl EnvResult {
    pub fn new(r_test: f64, rmse_values: Vec<f64>) -> Result<Self> {
        if rmse_values.is_empty() {
            return Err(CfrError::Empty {
                context: "EnvResult",
                needed: 1,
                got: 0,
            });
        }
        if rmse_values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CfrError::Consistency(format!(
                "RMSE values for r_test = {r_test} must be finite and >= 0"
            )));
        }
        Ok(EnvResult { r_test, rmse_values })
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.rmse_values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvMean {
    pub r_test: f64,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub beta_v_error_mean: f64,
    pub beta_v_error_var: f64,
    pub ae: f64,
    pub se: f64,
    pub per_env: Vec<EnvMean>,
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (divisor `len - 1`); zero for a single value.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CfrError::dim("rmse", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(CfrError::Empty {
            context: "rmse",
            needed: 1,
            got: 0,
        });
    }
    let sse: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean absolute coefficient error over `indices` (all coefficients when `None`).
pub fn beta_error(beta_hat: &[f64], beta_true: &[f64], indices: Option<&[usize]>) -> Result<f64> {
    if beta_hat.len() != beta_true.len() {
        return Err(CfrError::dim("beta_error", beta_true.len(), beta_hat.len()));
    }
    let all: Vec<usize>;
    let idx = match indices {
        Some(idx) => idx,
        None => {
            all = (0..beta_true.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(CfrError::Empty {
            context: "beta_error subset",
            needed: 1,
            got: 0,
        });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= beta_true.len()) {
        return Err(CfrError::Consistency(format!(
            "coefficient index {bad} out of range for length {}",
            beta_true.len()
        )));
    }
    let total: f64 = idx.iter().map(|&i| (beta_hat[i] - beta_true[i]).abs()).sum();
    Ok(total / idx.len() as f64)
}

/// Average error and stability error over environments.
///
/// Each environment is first reduced to its mean RMSE; SE is the sample
/// standard deviation of those means.
pub fn ae_se(env_results: &[EnvResult]) -> Result<(f64, f64)> {
    if env_results.len() < 2 {
        return Err(CfrError::Empty {
            context: "ae_se environments",
            needed: 2,
            got: env_results.len(),
        });
    }
    let means: Vec<f64> = env_results.iter().map(EnvResult::mean_rmse).collect();
    if means.iter().all(|&m| m == means[0]) {
        // summation rounding would otherwise leave a tiny nonzero spread
        return Ok((means[0], 0.0));
    }
    let ae = mean(&means);
    let ss: f64 = means.iter().map(|m| (m - ae) * (m - ae)).sum();
    let se = (ss / (means.len() - 1) as f64).sqrt();
    Ok((ae, se))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CfrError::dim("accuracy", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(CfrError::Empty {
            context: "accuracy",
            needed: 1,
            got: 0,
        });
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Assembles a report from coefficient errors across repetitions and per-environment RMSEs.
pub fn stability_report(beta_v_errors: &[f64], env_results: &[EnvResult]) -> Result<StabilityReport> {
    if beta_v_errors.is_empty() {
        return Err(CfrError::Empty {
            context: "stability_report repetitions",
            needed: 1,
            got: 0,
        });
    }
    let (ae, se) = ae_se(env_results)?;
    let mut per_env: Vec<EnvMean> = env_results
        .iter()
        .map(|e| EnvMean {
            r_test: e.r_test,
            mean_rmse: e.mean_rmse(),
        })
        .collect();
    per_env.sort_by(|a, b| a.r_test.total_cmp(&b.r_test));
    Ok(StabilityReport {
        beta_v_error_mean: mean(beta_v_errors),
        beta_v_error_var: sample_variance(beta_v_errors),
        ae,
        se,
        per_env,
    })
}

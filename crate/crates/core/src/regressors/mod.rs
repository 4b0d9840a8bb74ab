//! Linear regressors: the rectified model and its baselines.

mod baselines;
mod cfr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CfrError, Result};

pub use baselines::{decorrelation_objective, dwr_fit, lasso_fit, ols_fit, ridge_fit, DwrParams, LassoParams};
pub use cfr::{
    cfr_grad_beta, cfr_grad_w, cfr_loss, cfr_predict, train_cfr, train_cfr_xy, Alternation, CfrModel, EpochLosses,
    GradScale, TrainConfig, WUpdateLoss,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ols")]
    Ols,
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "lasso")]
    Lasso,
    #[serde(rename = "dwr-like")]
    DwrLike,
    #[serde(rename = "cfr")]
    Cfr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ols, Method::Lasso, Method::Ridge, Method::DwrLike, Method::Cfr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
            Method::DwrLike => "dwr-like",
            Method::Cfr => "cfr",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = CfrError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                CfrError::Config(format!(
                    "unknown method '{s}'; valid tags: {}",
                    Method::ALL.map(Method::as_str).join(", ")
                ))
            })
    }
}

/// A fitted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub method: Method,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub intercept: Option<f64>,
    #[serde(default)]
    pub regularization: Option<f64>,
    /// Set when an iterative solver stopped before meeting its tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(CfrError::dim("linear prediction", self.beta.len(), x.ncols()));
        }
        let beta = DVector::from_column_slice(&self.beta);
        let mut out = x * beta;
        if let Some(b0) = self.intercept {
            out.add_scalar_mut(b0);
        }
        Ok(out)
    }
}

pub(crate) fn check_xy(context: &'static str, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(CfrError::dim(context, x.nrows(), y.len()));
    }
    if x.nrows() == 0 {
        return Err(CfrError::Empty {
            context,
            needed: 1,
            got: 0,
        });
    }
    Ok(())
}

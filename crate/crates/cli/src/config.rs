use std::path::Path;

use cfr_core::classifier::ClassifierTrainConfig;
use cfr_core::datagen::{EnvironmentSpec, OutcomeForm};
use cfr_core::harness::{Scenario, DEFAULT_LASSO_LAMBDA, DEFAULT_RIDGE_LAMBDA};
use cfr_core::regressors::{DwrParams, LassoParams, TrainConfig};
use cfr_core::{CfrError, Execution, Result};
use serde::{Deserialize, Serialize};

/// Everything a command can be configured with. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Dataset recipe used by `gen`.
    pub environment: EnvironmentSpec,
    /// Regression trainer settings used by `train --method cfr`.
    pub train: TrainConfig,
    /// Classifier trainer settings used by `train --task classification`.
    pub classifier: ClassifierTrainConfig,
    pub ridge_lambda: f64,
    pub lasso: LassoParams,
    pub dwr: DwrParams,
    /// Custom scenario for `sweep` when no built-in one is named.
    pub scenario: Option<Scenario>,
    /// `parallel` or `sequential` scheduling of sweep cells.
    pub execution: Execution,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            environment: EnvironmentSpec::new(2000, 10, OutcomeForm::Poly, Some(1.7), 47),
            train: TrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            lasso: LassoParams::new(DEFAULT_LASSO_LAMBDA),
            dwr: DwrParams::default(),
            scenario: None,
            execution: Execution::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CfrError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CfrError::Config(format!("config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = CliConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: CliConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: CliConfig = serde_json::from_str(r#"{"train": {"epochs": 5}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.lr_w, TrainConfig::default().lr_w);
        assert_eq!(cfg.environment.n, 2000);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<CliConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
    }
}

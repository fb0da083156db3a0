//! JSON run configuration and its up-front validation.

use std::path::{Path, PathBuf};

use dgp_gvi::data::TargetColumns;
use dgp_gvi::dgp::{GviConfig, ModelConfig};
use dgp_gvi::divergence::QuantifierSpec;
use dgp_gvi::loss::LossSpec;
use dgp_gvi::train::TrainConfig;
use dgp_gvi::GviError;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Numeric CSV; a relative path is resolved against the config file.
    Csv {
        path: PathBuf,
        #[serde(default = "yes")]
        has_header: bool,
        #[serde(default)]
        targets: TargetColumns,
    },
    /// 1-D sine regression, optionally with gross outliers in the training targets.
    Sine {
        n: usize,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        contamination: Option<Contamination>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contamination {
    pub fraction: f64,
    pub magnitude: f64,
}

/// One loss/quantifier pairing to train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    /// One spec for every layer, or one per layer.
    #[serde(default = "default_quantifiers")]
    pub quantifiers: Vec<QuantifierSpec>,
    #[serde(default = "one")]
    pub loss_weight: f64,
}

impl MethodSpec {
    pub fn gvi(&self, num_layers: usize) -> GviConfig {
        let quantifiers = if self.quantifiers.len() == 1 {
            vec![self.quantifiers[0]; num_layers]
        } else {
            self.quantifiers.clone()
        };
        GviConfig {
            loss: self.loss,
            loss_weight: self.loss_weight,
            quantifiers,
        }
    }

    /// Quantifier column of the results table.
    pub fn quantifier_label(&self) -> String {
        let labels: Vec<String> = self.quantifiers.iter().map(QuantifierSpec::label).collect();
        labels.join(";")
    }

    pub fn label(&self) -> String {
        let loss = match self.loss.hyperparameter() {
            Some(h) => format!("{}({h})", self.loss.label()),
            None => self.loss.label().to_string(),
        };
        format!("{loss}/{}", self.quantifier_label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_loss")]
    pub loss: LossSpec,
    #[serde(default = "default_quantifiers")]
    pub quantifiers: Vec<QuantifierSpec>,
    #[serde(default = "one")]
    pub loss_weight: f64,
    /// Extra methods evaluated on the same splits by `benchmark`.
    #[serde(default)]
    pub compare: Vec<MethodSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "one_split")]
    pub n_splits: usize,
    /// Sample paths used for test-set prediction.
    #[serde(default = "default_prediction_samples")]
    pub prediction_samples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn one_split() -> usize {
    1
}
fn default_noise_sd() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_prediction_samples() -> usize {
    100
}
fn default_loss() -> LossSpec {
    LossSpec::Nll
}
fn default_quantifiers() -> Vec<QuantifierSpec> {
    vec![QuantifierSpec::Kld]
}

fn field(name: &str, e: GviError) -> CliError {
    CliError::config(format!("{name}: {e}"))
}

impl RunConfig {
    /// Reads and validates a config; relative dataset paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let DatasetSpec::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn primary(&self) -> MethodSpec {
        MethodSpec {
            loss: self.loss,
            quantifiers: self.quantifiers.clone(),
            loss_weight: self.loss_weight,
        }
    }

    /// The primary method followed by every `compare` entry.
    pub fn methods(&self) -> Vec<MethodSpec> {
        std::iter::once(self.primary()).chain(self.compare.iter().cloned()).collect()
    }

    /// Checks every precondition; the error names the offending field.
    pub fn validate(&self) -> CliResult<()> {
        match &self.dataset {
            DatasetSpec::Csv { path, .. } => {
                if !path.is_file() {
                    return Err(CliError::config(format!("dataset.path: {} is not a readable file", path.display())));
                }
            }
            DatasetSpec::Sine {
                n,
                noise_sd,
                contamination,
            } => {
                if *n < dgp_gvi::data::MIN_ROWS {
                    return Err(CliError::config(format!(
                        "dataset.n: {n} rows, at least {} are required",
                        dgp_gvi::data::MIN_ROWS
                    )));
                }
                if !(*noise_sd >= 0.0 && noise_sd.is_finite()) {
                    return Err(CliError::config(format!("dataset.noise_sd: {noise_sd} must be finite and >= 0")));
                }
                if let Some(c) = contamination {
                    if !(0.0..=1.0).contains(&c.fraction) {
                        return Err(CliError::config(format!(
                            "dataset.contamination.fraction: {} must lie in [0, 1]",
                            c.fraction
                        )));
                    }
                    if !c.magnitude.is_finite() {
                        return Err(CliError::config("dataset.contamination.magnitude: must be finite"));
                    }
                }
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::config(format!(
                "test_fraction: {} must lie in the open interval (0, 1)",
                self.test_fraction
            )));
        }
        self.model.validate().map_err(|e| field("model", e))?;
        self.train.validate().map_err(|e| field("train", e))?;
        if self.n_splits == 0 {
            return Err(CliError::config("n_splits: must be at least 1"));
        }
        if self.prediction_samples == 0 {
            return Err(CliError::config("prediction_samples: must be at least 1"));
        }
        let layers = self.model.layers;
        for (k, m) in self.methods().iter().enumerate() {
            let at = |name: &str| {
                if k == 0 {
                    name.to_string()
                } else {
                    format!("compare[{}].{name}", k - 1)
                }
            };
            m.loss.validate().map_err(|e| field(&at("loss"), e))?;
            if !(m.loss_weight > 0.0 && m.loss_weight.is_finite()) {
                return Err(CliError::config(format!(
                    "{}: {} must be finite and > 0",
                    at("loss_weight"),
                    m.loss_weight
                )));
            }
            if m.quantifiers.len() != 1 && m.quantifiers.len() != layers {
                return Err(CliError::config(format!(
                    "{}: expected 1 or {layers} entries, found {}",
                    at("quantifiers"),
                    m.quantifiers.len()
                )));
            }
            for (i, q) in m.quantifiers.iter().enumerate() {
                q.validate().map_err(|e| field(&format!("{}[{i}]", at("quantifiers")), e))?;
            }
        }
        Ok(())
    }
}

//! Finite-difference audit of the gradient over a grid of loss/quantifier presets.

use std::path::Path;

use dgp_gvi::train::{audit_presets, grad_check, reference_problem, GradCheckConfig};
use serde::Deserialize;

use crate::config::MethodSpec;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckFile {
    pub layers: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub n_samples: usize,
    /// Defaults to the full 3 × 3 loss/quantifier grid.
    pub presets: Option<Vec<MethodSpec>>,
}

impl Default for GradcheckFile {
    fn default() -> Self {
        GradcheckFile {
            layers: 2,
            seed: 3,
            tolerance: 1e-4,
            n_samples: 3,
            presets: None,
        }
    }
}

impl GradcheckFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    fn presets(&self) -> Vec<MethodSpec> {
        self.presets.clone().unwrap_or_else(|| {
            audit_presets()
                .into_iter()
                .map(|(loss, q)| MethodSpec {
                    loss,
                    quantifiers: vec![q],
                    loss_weight: 1.0,
                })
                .collect()
        })
    }

    fn validate(&self) -> CliResult<()> {
        if !(1..=4).contains(&self.layers) {
            return Err(CliError::config(format!("layers: {} must lie in 1..=4", self.layers)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(CliError::config(format!("tolerance: {} must be finite and > 0", self.tolerance)));
        }
        if self.n_samples == 0 {
            return Err(CliError::config("n_samples: must be at least 1"));
        }
        for (k, p) in self.presets().iter().enumerate() {
            p.loss
                .validate()
                .map_err(|e| CliError::config(format!("presets[{k}].loss: {e}")))?;
            if p.quantifiers.len() != 1 && p.quantifiers.len() != self.layers {
                return Err(CliError::config(format!("presets[{k}].quantifiers: expected 1 or {} entries", self.layers)));
            }
            for (i, q) in p.quantifiers.iter().enumerate() {
                q.validate()
                    .map_err(|e| CliError::config(format!("presets[{k}].quantifiers[{i}]: {e}")))?;
            }
        }
        Ok(())
    }
}

pub fn run(file: &GradcheckFile, corrupt_index: Option<usize>) -> CliResult<()> {
    file.validate()?;
    let (model, x, y) = reference_problem(file.layers, file.seed)?;
    let cfg = GradCheckConfig {
        tolerance: file.tolerance,
        n_samples: file.n_samples,
        seed: file.seed,
        corrupt_index,
        ..Default::default()
    };
    println!("reference model: {} layers, {} parameters", file.layers, model.layout().len());
    let mut worst: Option<(String, String, usize, f64)> = None;
    let mut failures = 0;
    for preset in file.presets() {
        let report = grad_check(&model, &x, &y, &preset.gvi(file.layers), &cfg)?;
        let status = if report.passed() { "ok" } else { "FAIL" };
        println!("{:<40} max rel error {:.3e}  {status}", preset.label(), report.max_rel_error);
        for (block, err) in &report.per_block {
            println!("    {block:<32} {err:.3e}");
        }
        if !report.passed() {
            failures += 1;
        }
        if let Some(w) = report.worst {
            if worst.as_ref().is_none_or(|(_, _, _, e)| w.rel_error > *e) {
                worst = Some((preset.label(), w.block, w.index, w.rel_error));
            }
        }
    }
    match worst {
        Some((preset, block, index, err)) if failures > 0 => Err(CliError::GradCheck(format!(
            "{failures} preset(s) above tolerance {:e}; worst: {preset}, block {block} (parameter {index}), relative error {err:.3e}",
            file.tolerance
        ))),
        _ => {
            println!("all presets within tolerance {:e}", file.tolerance);
            Ok(())
        }
    }
}

//! Self-describing JSON checkpoints.
//!
//! A checkpoint stores the full model (all parameters in their unconstrained
//! form), the parameter layout with shapes and transforms, the seed and the
//! normalization statistics. Floats are written with shortest round-trip
//! formatting, so a save/load cycle reproduces every bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Stats;
use crate::dgp::{DgpModel, ParamLayout};
use crate::error::{GviError, Result};

pub const FORMAT: &str = "dgp-gvi-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub layout: ParamLayout,
    pub model: DgpModel<f64>,
    pub x_stats: Option<Stats>,
    pub y_stats: Option<Stats>,
}

impl Checkpoint {
    pub fn new(model: DgpModel<f64>, seed: u64) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            layout: model.layout(),
            model,
            x_stats: None,
            y_stats: None,
        }
    }

    pub fn with_stats(mut self, x_stats: Stats, y_stats: Stats) -> Self {
        self.x_stats = Some(x_stats);
        self.y_stats = Some(y_stats);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        if let Some(bad) = self.model.to_flat().iter().find(|v| !v.is_finite()) {
            return Err(GviError::Checkpoint(format!("refusing to store non-finite parameter {bad}")));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(GviError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(GviError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                ck.version
            )));
        }
        ck.model.validate()?;
        if ck.layout != ck.model.layout() {
            return Err(GviError::Checkpoint("stored layout does not match the model".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::ModelConfig;
    use crate::linalg::Mat;

    fn model() -> DgpModel<f64> {
        let x = Mat::from_fn(12, 2, |i, j| ((i * 5 + j) % 7) as f64 / 3.0 + 0.1 * (i as f64).sin());
        DgpModel::init(&x, 1, &ModelConfig { layers: 2, inducing: 5, ..Default::default() }, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = model();
        // awkward values that need all 17 significant digits
        m.layers[0].q_mu[(0, 0)] = 0.1 + 0.2;
        m.layers[1].kernel.log_variance = -1.0 / 3.0;
        let ck = Checkpoint::new(m.clone(), 42).with_stats(Stats::identity(2), Stats::identity(1));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.model.to_flat()), bits(m.to_flat()));
    }

    #[test]
    fn header_is_checked() {
        let ck = Checkpoint::new(model(), 0);
        let text = ck.to_json().unwrap().replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(Checkpoint::from_json(&text), Err(GviError::Checkpoint(_))));
        let text = ck.to_json().unwrap().replace(FORMAT, "something-else");
        assert!(Checkpoint::from_json(&text).is_err());
    }

    #[test]
    fn non_finite_parameters_refused() {
        let mut m = model();
        m.likelihood.log_noise_variance = f64::NAN;
        assert!(Checkpoint::new(m, 0).to_json().is_err());
    }
}

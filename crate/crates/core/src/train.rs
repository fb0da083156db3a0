//! Doubly-stochastic Adam training and a finite-difference gradient audit.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Var};
use crate::dgp::{draw_path_noise, gvi_objective_with_noise, DgpModel, GviConfig, ModelConfig, ParamLayout, PathNoise};
use crate::divergence::QuantifierSpec;
use crate::error::{GviError, Result};
use crate::linalg::Mat;
use crate::loss::LossSpec;

/// Largest batch used by default.
pub const MAX_BATCH: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Minibatch size; `min(1000, n)` when absent.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Rescales the gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
    /// Sample paths per objective evaluation.
    pub n_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            iterations: 2000,
            batch_size: None,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            n_samples: 10,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule of 20000 iterations.
    pub fn long_run() -> Self {
        TrainConfig {
            iterations: 20_000,
            ..Default::default()
        }
    }

    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(MAX_BATCH).min(n)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GviError::InvalidHyperparameter {
                    name,
                    value: v,
                    reason: "must be finite and > 0",
                })
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("adam_eps", self.adam_eps)?;
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(GviError::InvalidHyperparameter {
                    name,
                    value: b,
                    reason: "must lie in [0, 1)",
                });
            }
        }
        if let Some(c) = self.grad_clip {
            positive("grad_clip", c)?;
        }
        if self.batch_size == Some(0) {
            return Err(GviError::InvalidHyperparameter {
                name: "batch_size",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        if self.n_samples == 0 {
            return Err(GviError::InvalidHyperparameter {
                name: "n_samples",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        Ok(())
    }
}

/// First and second moment accumulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

fn block_name(layout: Option<&ParamLayout>, i: usize) -> String {
    layout
        .and_then(|l| l.block_of(i))
        .map_or_else(|| format!("parameter {i}"), |b| format!("{} (index {i})", b.name))
}

/// One bias-corrected Adam update at step `t ≥ 1`.
///
/// Non-finite gradients abort without touching `params` or `state`; the
/// error names the parameter block when `layout` is given.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: usize,
    layout: Option<&ParamLayout>,
) -> Result<()> {
    let n = params.len();
    for (context, found) in [("adam gradients", grads.len()), ("adam first moment", state.m.len()), ("adam second moment", state.v.len())] {
        if found != n {
            return Err(GviError::DimensionMismatch {
                context,
                expected: n,
                found,
            });
        }
    }
    assert!(t >= 1, "adam step index starts at 1");
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(GviError::NonFiniteGradient {
            block: block_name(layout, i),
            iteration: t,
        });
    }
    let scale = match cfg.grad_clip {
        Some(c) => {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..n {
        let g = grads[i] * scale;
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Objective value and its gradient with respect to the flat parameters.
pub fn objective_and_gradient(
    model: &DgpModel<f64>,
    x: &Mat<f64>,
    y: &Mat<f64>,
    gvi: &GviConfig,
    noise: &PathNoise,
    n_total: usize,
) -> Result<(f64, Vec<f64>)> {
    let flat = model.to_flat();
    let mut failure = None;
    let (value, grad) = autodiff::gradient(
        |p| {
            let out = model
                .with_params::<Var>(p)
                .and_then(|m| gvi_objective_with_noise(&m, x, y, gvi, noise, n_total));
            out.unwrap_or_else(|e| {
                failure = Some(e);
                Var::constant(f64::NAN)
            })
        },
        &flat,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok((value, grad)),
    }
}

/// Mixes `(seed, stream, index)` into an independent 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_PATHS: u64 = 2;

/// Epoch-shuffled minibatch indices.
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Batcher {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE, 0)),
            order: (0..n).collect(),
            pos: n,
            batch,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.batch == self.order.len() {
            return self.order.clone();
        }
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (self.batch - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Wall time since the start of training.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// Hash of the final parameter bits.
    pub final_snapshot: String,
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,grad_norm,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.iteration, r.objective, r.grad_norm, r.seconds)?;
        }
        Ok(())
    }
}

/// FNV-1a over the bit patterns of `values`.
pub fn snapshot_id(values: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Minimizes the GVI objective over minibatches of `(x, y)`.
///
/// Every iteration draws the next epoch-shuffled batch and fresh path noise;
/// both streams derive from `cfg.seed`, so runs are reproducible bit for bit.
pub fn train(
    model: &DgpModel<f64>,
    x: &Mat<f64>,
    y: &Mat<f64>,
    gvi: &GviConfig,
    cfg: &TrainConfig,
) -> Result<(DgpModel<f64>, TrainTrace)> {
    cfg.validate()?;
    gvi.validate(model.num_layers())?;
    model.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(GviError::EmptyBatch);
    }
    if y.rows() != n {
        return Err(GviError::DimensionMismatch {
            context: "training targets",
            expected: n,
            found: y.rows(),
        });
    }
    let batch = cfg.effective_batch(n);
    let layout = model.layout();
    let mut params = model.to_flat();
    let mut state = AdamState::new(params.len());
    let mut batcher = Batcher::new(n, batch, cfg.seed);
    let mut current = model.clone();
    let mut records = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();

    for it in 1..=cfg.iterations {
        let idx = batcher.next_batch();
        let (xb, yb) = (x.select_rows(&idx), y.select_rows(&idx));
        let noise = draw_path_noise(&current, batch, cfg.n_samples, derive_seed(cfg.seed, STREAM_PATHS, it as u64));
        let (value, grad) = objective_and_gradient(&current, &xb, &yb, gvi, &noise, n)?;
        if !value.is_finite() {
            return Err(GviError::NonFiniteObjective {
                iteration: it,
                batch: idx,
            });
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        adam_step(&mut params, &grad, &mut state, cfg, it, Some(&layout))?;
        current = model.with_params(&params)?;
        records.push(TraceRecord {
            iteration: it,
            objective: value,
            grad_norm,
            seconds: start.elapsed().as_secs_f64(),
        });
        if it % 500 == 0 {
            log::debug!("iteration {it}: objective {value:.6} |grad| {grad_norm:.3e}");
        }
    }
    let trace = TrainTrace {
        records,
        final_snapshot: snapshot_id(&params),
    };
    Ok((current, trace))
}

/// Settings for [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub tolerance: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Relative finite-difference step, scaled by `max(|θ|, 1)`.
    pub rel_step: f64,
    /// Gradient magnitudes below this are compared in absolute terms.
    pub abs_floor: f64,
    /// Negative control: adds 1 to the implemented gradient at this index.
    pub corrupt_index: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            tolerance: 1e-4,
            n_samples: 3,
            seed: 0,
            rel_step: 1e-5,
            abs_floor: 1e-6,
            corrupt_index: None,
        }
    }
}

/// Largest model accepted by [`grad_check`].
pub const GRAD_CHECK_MAX_PARAMS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub block: String,
    pub implemented: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    /// `(block, max relative error)` in layout order.
    pub per_block: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub worst: Option<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares the implemented gradient with central differences, holding
/// the path noise fixed across all evaluations.
///
/// The error for each parameter is `|g − g_fd| / max(|g|, |g_fd|, abs_floor)`.
pub fn grad_check(
    model: &DgpModel<f64>,
    x: &Mat<f64>,
    y: &Mat<f64>,
    gvi: &GviConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if x.rows() == 0 {
        return Err(GviError::EmptyBatch);
    }
    let layout = model.layout();
    if layout.len() > GRAD_CHECK_MAX_PARAMS {
        return Err(GviError::InvalidModel(format!(
            "gradient check needs at most {GRAD_CHECK_MAX_PARAMS} parameters, model has {}",
            layout.len()
        )));
    }
    let n = x.rows();
    let noise = draw_path_noise(model, n, cfg.n_samples, cfg.seed);
    let (_, mut grad) = objective_and_gradient(model, x, y, gvi, &noise, n)?;
    if let Some(i) = cfg.corrupt_index {
        if i < grad.len() {
            grad[i] += 1.0;
        }
    }
    let theta = model.to_flat();
    let eval = |p: &[f64]| -> Result<f64> {
        let m = model.with_params(p)?;
        gvi_objective_with_noise(&m, x, y, gvi, &noise, n)
    };
    let mut params = Vec::with_capacity(theta.len());
    let mut work = theta.clone();
    for i in 0..theta.len() {
        let h = cfg.rel_step * theta[i].abs().max(1.0);
        work[i] = theta[i] + h;
        let up = eval(&work)?;
        work[i] = theta[i] - h;
        let down = eval(&work)?;
        work[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(fd.abs()).max(cfg.abs_floor);
        params.push(ParamCheck {
            index: i,
            block: layout.block_of(i).map_or_else(String::new, |b| b.name.clone()),
            implemented: grad[i],
            finite_difference: fd,
            rel_error: (grad[i] - fd).abs() / denom,
        });
    }
    let per_block = layout
        .blocks
        .iter()
        .map(|b| {
            let worst = params[b.offset..b.offset + b.len]
                .iter()
                .map(|p| p.rel_error)
                .fold(0.0, f64::max);
            (b.name.clone(), worst)
        })
        .collect();
    let worst = params
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned();
    Ok(GradCheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        params,
        per_block,
        worst,
        tolerance: cfg.tolerance,
    })
}

/// Small audit problem: 6 points in 2-D, `m = 4` inducing inputs per layer,
/// parameters shifted off the initial point by uniform noise in ±0.3.
pub fn reference_problem(layers: usize, seed: u64) -> Result<(DgpModel<f64>, Mat<f64>, Mat<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Mat<f64> = Mat::from_fn(6, 2, |_, _| rng.random_range(-1.5..1.5));
    let y = Mat::from_fn(6, 1, |i, _| (2.0 * x[(i, 0)]).sin() + 0.3 * x[(i, 1)]);
    let cfg = ModelConfig {
        layers,
        inducing: 4,
        ..Default::default()
    };
    let model = DgpModel::init(&x, 1, &cfg, seed)?;
    // move away from the symmetric initial point so every block has a gradient
    let flat: Vec<f64> = model.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    Ok((model.with_params(&flat)?, x, y))
}

/// The audited loss × quantifier grid: nll, γ = 1.05, β = 1.5 against
/// KLD, scaled KLD (w = 2) and Rényi (α = 0.5).
pub fn audit_presets() -> Vec<(LossSpec, QuantifierSpec)> {
    let losses = [LossSpec::Nll, LossSpec::gamma(1.05), LossSpec::beta(1.5)];
    let quantifiers = [QuantifierSpec::Kld, QuantifierSpec::ScaledKld { w: 2.0 }, QuantifierSpec::Renyi { alpha: 0.5 }];
    losses
        .iter()
        .flat_map(|l| quantifiers.iter().map(move |q| (*l, *q)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState {
            m: vec![0.5, 0.5],
            v: vec![0.1, 0.1],
        };
        let cfg = TrainConfig::default();
        // with nonzero moments the update is nonzero; start from zero moments instead
        let mut fresh = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut fresh, &cfg, 1, None).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &cfg, 3, None).unwrap();
        assert!((s.m[0] - 0.45).abs() < 1e-15);
        assert!((s.v[0] - 0.0999).abs() < 1e-15);
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &[3.0, -0.2, 1e3], &mut s, &cfg, 1, None).unwrap();
        for (v, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * 0.01).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        let err = adam_step(&mut p, &[0.0, f64::NAN, 0.0], &mut s, &TrainConfig::default(), 1, None).unwrap_err();
        match err {
            GviError::NonFiniteGradient { block, iteration } => {
                assert!(block.contains('1'));
                assert_eq!(iteration, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn clipping_bounds_the_step_input() {
        let cfg = TrainConfig {
            grad_clip: Some(1.0),
            ..Default::default()
        };
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[100.0], &mut s, &cfg, 1, None).unwrap();
        assert!((s.m[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn batcher_covers_each_epoch() {
        let mut b = Batcher::new(10, 3, 7);
        let mut seen = Vec::new();
        for _ in 0..10 {
            seen.extend(b.next_batch());
        }
        // the first 30 draws are exactly three epochs
        for epoch in seen.chunks(10) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn full_batch_keeps_order() {
        let mut b = Batcher::new(4, 4, 0);
        assert_eq!(b.next_batch(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 2, 3);
        assert_ne!(a, derive_seed(1, 2, 4));
        assert_ne!(a, derive_seed(1, 3, 3));
        assert_eq!(a, derive_seed(1, 2, 3));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { adam_beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: Some(0), ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().effective_batch(50), 50);
        assert_eq!(TrainConfig::default().effective_batch(5000), 1000);
        assert_eq!(TrainConfig::long_run().iterations, 20_000);
    }
}

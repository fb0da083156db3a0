use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layer::{layer_moments_cached, layer_sample, GaussianMoments, LayerCache};
use super::model::DgpModel;
use crate::divergence::{apply_quantifier, GaussianDist, QuantifierSpec};
use crate::error::{GviError, Result};
use crate::linalg::Mat;
use crate::loss::{expected_loss, LossSpec, MarginalMoments};
use crate::scalar::Scalar;

/// Loss, its weight, and one uncertainty quantifier per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GviConfig {
    pub loss: LossSpec,
    /// Multiplies the data term; `w·loss + KLD` is the same problem as `loss + KLD/w`.
    #[serde(default = "one")]
    pub loss_weight: f64,
    pub quantifiers: Vec<QuantifierSpec>,
}

fn one() -> f64 {
    1.0
}

impl GviConfig {
    /// Standard variational inference: negative log likelihood and KLD in every layer.
    pub fn elbo(num_layers: usize) -> Self {
        GviConfig {
            loss: LossSpec::Nll,
            loss_weight: 1.0,
            quantifiers: vec![QuantifierSpec::Kld; num_layers],
        }
    }

    pub fn uniform(loss: LossSpec, quantifier: QuantifierSpec, num_layers: usize) -> Self {
        GviConfig {
            loss,
            loss_weight: 1.0,
            quantifiers: vec![quantifier; num_layers],
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.loss.validate()?;
        if !(self.loss_weight > 0.0 && self.loss_weight.is_finite()) {
            return Err(GviError::InvalidHyperparameter {
                name: "loss_weight",
                value: self.loss_weight,
                reason: "must be finite and > 0",
            });
        }
        if self.quantifiers.len() != num_layers {
            return Err(GviError::DimensionMismatch {
                context: "one quantifier per layer",
                expected: num_layers,
                found: self.quantifiers.len(),
            });
        }
        self.quantifiers.iter().try_for_each(QuantifierSpec::validate)
    }
}

/// Standard-normal draws driving the hidden layers: `paths[p][l]` is
/// (batch × width of layer `l`) for every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct PathNoise {
    pub paths: Vec<Vec<Mat<f64>>>,
}

impl PathNoise {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Noise with every row repeated `times` times in place, matching a batch
    /// whose rows were duplicated the same way.
    pub fn repeat_rows(&self, times: usize) -> PathNoise {
        PathNoise {
            paths: self
                .paths
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|m| {
                            let idx: Vec<usize> = (0..m.rows()).flat_map(|i| std::iter::repeat_n(i, times)).collect();
                            m.select_rows(&idx)
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Draws path noise for `batch` points; deterministic in `seed`.
pub fn draw_path_noise<T: Scalar>(model: &DgpModel<T>, batch: usize, n_samples: usize, seed: u64) -> PathNoise {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = model.layers.len().saturating_sub(1);
    let paths = (0..n_samples)
        .map(|_| {
            model.layers[..hidden]
                .iter()
                .map(|layer| Mat::from_fn(batch, layer.output_dim(), |_, _| StandardNormal.sample(&mut rng)))
                .collect()
        })
        .collect();
    PathNoise { paths }
}

fn check_noise<T: Scalar>(model: &DgpModel<T>, batch: usize, noise: &PathNoise) -> Result<()> {
    if noise.paths.is_empty() {
        return Err(GviError::InvalidHyperparameter {
            name: "n_samples",
            value: 0.0,
            reason: "at least one sample path is required",
        });
    }
    let hidden = model.layers.len() - 1;
    for path in &noise.paths {
        if path.len() != hidden {
            return Err(GviError::DimensionMismatch {
                context: "path noise layers",
                expected: hidden,
                found: path.len(),
            });
        }
        for (l, m) in path.iter().enumerate() {
            if m.shape() != (batch, model.layers[l].output_dim()) {
                return Err(GviError::DimensionMismatch {
                    context: "path noise shape",
                    expected: batch * model.layers[l].output_dim(),
                    found: m.rows() * m.cols(),
                });
            }
        }
    }
    Ok(())
}

fn caches<T: Scalar>(model: &DgpModel<T>) -> Result<Vec<LayerCache<T>>> {
    model.layers.iter().map(|l| l.cache()).collect()
}

fn forward_cached<T: Scalar>(
    model: &DgpModel<T>,
    caches: &[LayerCache<T>],
    x: &Mat<f64>,
    noise: &PathNoise,
) -> Result<Vec<GaussianMoments<T>>> {
    model.validate()?;
    if x.cols() != model.input_dim() {
        return Err(GviError::DimensionMismatch {
            context: "model inputs",
            expected: model.input_dim(),
            found: x.cols(),
        });
    }
    check_noise(model, x.rows(), noise)?;
    let xt: Mat<T> = x.cast();
    // the first layer sees the same inputs on every path
    let first = layer_moments_cached(&model.layers[0], &caches[0], &xt)?;
    if model.layers.len() == 1 {
        return Ok(vec![first; noise.num_paths()]);
    }
    noise
        .paths
        .iter()
        .map(|path| {
            let mut h = layer_sample(&first, &path[0])?;
            for l in 1..model.layers.len() {
                let mom = layer_moments_cached(&model.layers[l], &caches[l], &h)?;
                if l + 1 == model.layers.len() {
                    return Ok(mom);
                }
                h = layer_sample(&mom, &path[l])?;
            }
            unreachable!("loop returns at the last layer")
        })
        .collect()
}

/// Final-layer moments for each sample path, using the given noise.
pub fn model_forward_with_noise<T: Scalar>(
    model: &DgpModel<T>,
    x: &Mat<f64>,
    noise: &PathNoise,
) -> Result<Vec<GaussianMoments<T>>> {
    forward_cached(model, &caches(model)?, x, noise)
}

/// Propagates `x` through the hidden layers by sampling and returns the
/// final-layer moments of each of `n_samples` paths.
pub fn model_forward<T: Scalar>(
    model: &DgpModel<T>,
    x: &Mat<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<GaussianMoments<T>>> {
    let noise = draw_path_noise(model, x.rows(), n_samples, seed);
    model_forward_with_noise(model, x, &noise)
}

fn divergence_cached<T: Scalar>(
    model: &DgpModel<T>,
    caches: &[LayerCache<T>],
    specs: &[QuantifierSpec],
) -> Result<T> {
    if specs.len() != model.layers.len() {
        return Err(GviError::DimensionMismatch {
            context: "one quantifier per layer",
            expected: model.layers.len(),
            found: specs.len(),
        });
    }
    let mut total = T::zero();
    for ((layer, cache), spec) in model.layers.iter().zip(caches).zip(specs) {
        for c in 0..layer.output_dim() {
            let q = GaussianDist::new(layer.q_mu.column(c), cache.s_factors[c].clone())?;
            let p = if layer.whiten {
                GaussianDist::standard(layer.num_inducing())
            } else {
                GaussianDist::new(cache.mean_z.column(c), cache.kzz_chol.clone())?
            };
            total += apply_quantifier(spec, &q, &p)?;
        }
    }
    Ok(total)
}

/// `Σ_l Σ_c D_l(q(u_c) ‖ p(u_c))` over layers and output columns.
///
/// The prior is `N(0, I)` for whitened layers and `N(mean_fn(Z)_c, K_zz)` otherwise.
pub fn divergence_term<T: Scalar>(model: &DgpModel<T>, specs: &[QuantifierSpec]) -> Result<T> {
    divergence_cached(model, &caches(model)?, specs)
}

/// The GVI objective on a minibatch with fixed path noise.
///
/// `loss_weight · (n_total / batch) · mean_paths Σ_i E_q[ℓ(f_i, y_i)] + divergence_term`.
pub fn gvi_objective_with_noise<T: Scalar>(
    model: &DgpModel<T>,
    x: &Mat<f64>,
    y: &Mat<f64>,
    gvi: &GviConfig,
    noise: &PathNoise,
    n_total: usize,
) -> Result<T> {
    gvi.validate(model.layers.len())?;
    let batch = x.rows();
    if batch == 0 {
        return Err(GviError::EmptyBatch);
    }
    if y.rows() != batch {
        return Err(GviError::DimensionMismatch {
            context: "batch targets",
            expected: batch,
            found: y.rows(),
        });
    }
    if y.cols() != model.output_dim() {
        return Err(GviError::DimensionMismatch {
            context: "target width",
            expected: model.output_dim(),
            found: y.cols(),
        });
    }
    if n_total < batch {
        return Err(GviError::InvalidHyperparameter {
            name: "n_total",
            value: n_total as f64,
            reason: "must be at least the batch size",
        });
    }
    let caches = caches(model)?;
    let mut paths = forward_cached(model, &caches, x, noise)?;
    if model.layers.len() == 1 {
        // every path is the same deterministic moment set
        paths.truncate(1);
    }
    let yt: Mat<T> = y.cast();
    let mut data = T::zero();
    for mom in &paths {
        for i in 0..batch {
            let q = MarginalMoments::new(mom.mean.row(i).to_vec(), mom.var.row(i).to_vec())?;
            data += expected_loss(&gvi.loss, yt.row(i), &q, &model.likelihood)?;
        }
    }
    let scale = gvi.loss_weight * n_total as f64 / (batch as f64 * paths.len() as f64);
    Ok(T::cst(scale) * data + divergence_cached(model, &caches, &gvi.quantifiers)?)
}

/// [`gvi_objective_with_noise`] with `n_samples` paths drawn from `seed`.
pub fn gvi_objective<T: Scalar>(
    model: &DgpModel<T>,
    x: &Mat<f64>,
    y: &Mat<f64>,
    gvi: &GviConfig,
    n_samples: usize,
    seed: u64,
    n_total: usize,
) -> Result<T> {
    let noise = draw_path_noise(model, x.rows(), n_samples, seed);
    gvi_objective_with_noise(model, x, y, gvi, &noise, n_total)
}

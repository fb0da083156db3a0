use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerState, MeanFunction};
use crate::error::{GviError, Result};
use crate::kernel::KernelParams;
use crate::linalg::{symmetric_eigen, Mat};
use crate::loss::LikelihoodParams;
use crate::scalar::{softplus_inv, Scalar};

/// Widest hidden layer used by default.
pub const MAX_HIDDEN_WIDTH: usize = 30;

/// Structural choices and initial values for a new model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    /// Hidden-layer width; `min(30, D)` when absent.
    pub hidden_width: Option<usize>,
    pub inducing: usize,
    pub whiten: bool,
    pub train_inducing: bool,
    pub noise_variance: f64,
    /// Initial `S_c = q_sqrt_variance · I`.
    pub q_sqrt_variance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden_width: None,
            inducing: 100,
            whiten: true,
            train_inducing: true,
            noise_variance: 0.05,
            q_sqrt_variance: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(GviError::InvalidModel("layers must be >= 1".into()));
        }
        if self.inducing == 0 {
            return Err(GviError::InvalidModel("inducing must be >= 1".into()));
        }
        if self.hidden_width == Some(0) {
            return Err(GviError::InvalidModel("hidden_width must be >= 1".into()));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(GviError::InvalidHyperparameter {
                name: "noise_variance",
                value: self.noise_variance,
                reason: "must be finite and > 0",
            });
        }
        if !(self.q_sqrt_variance > 0.0 && self.q_sqrt_variance.is_finite()) {
            return Err(GviError::InvalidHyperparameter {
                name: "q_sqrt_variance",
                value: self.q_sqrt_variance,
                reason: "must be finite and > 0",
            });
        }
        Ok(())
    }
}

/// A stack of sparse-GP layers followed by an isotropic Gaussian likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpModel<T> {
    pub layers: Vec<LayerState<T>>,
    pub likelihood: LikelihoodParams<T>,
}

/// How a stored parameter maps to its constrained value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    /// Lower-triangular factor, row-major, diagonal through softplus.
    LowerTriangularSoftplusDiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
    pub transform: Transform,
}

/// Named blocks of the flat trainable-parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block containing flat index `i`.
    pub fn block_of(&self, i: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| i >= b.offset && i < b.offset + b.len)
    }

    fn push(&mut self, name: String, shape: Vec<usize>, len: usize, transform: Transform) {
        let offset = self.len();
        self.blocks.push(ParamBlock {
            name,
            offset,
            len,
            shape,
            transform,
        });
    }
}

impl<T: Scalar> DgpModel<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, LayerState::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.likelihood.output_dim
    }

    /// Checks shapes, layer chaining and the zero-mean final layer.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(GviError::InvalidModel("model has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 && layer.input_dim() != self.layers[l - 1].output_dim() {
                return Err(GviError::DimensionMismatch {
                    context: "layer chaining",
                    expected: self.layers[l - 1].output_dim(),
                    found: layer.input_dim(),
                });
            }
        }
        let last = self.layers.last().expect("non-empty");
        if last.output_dim() != self.likelihood.output_dim {
            return Err(GviError::DimensionMismatch {
                context: "final layer width",
                expected: self.likelihood.output_dim,
                found: last.output_dim(),
            });
        }
        if !matches!(last.mean_fn, MeanFunction::Zero) {
            return Err(GviError::InvalidModel("final layer must have a zero mean function".into()));
        }
        Ok(())
    }

    /// Layout of the trainable parameters, matching [`Self::to_flat`].
    pub fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout { blocks: Vec::new() };
        for (l, layer) in self.layers.iter().enumerate() {
            let m = layer.num_inducing();
            if layer.train_inducing {
                layout.push(
                    format!("layers[{l}].inducing"),
                    vec![m, layer.input_dim()],
                    m * layer.input_dim(),
                    Transform::Identity,
                );
            }
            layout.push(
                format!("layers[{l}].q_mu"),
                vec![m, layer.output_dim()],
                m * layer.output_dim(),
                Transform::Identity,
            );
            layout.push(
                format!("layers[{l}].q_sqrt"),
                vec![layer.output_dim(), m, m],
                layer.output_dim() * m * (m + 1) / 2,
                Transform::LowerTriangularSoftplusDiagonal,
            );
            layout.push(
                format!("layers[{l}].kernel.variance"),
                vec![],
                1,
                Transform::Log,
            );
            layout.push(
                format!("layers[{l}].kernel.lengthscales"),
                vec![layer.input_dim()],
                layer.input_dim(),
                Transform::Log,
            );
        }
        layout.push("likelihood.variance".into(), vec![], 1, Transform::Log);
        layout
    }

    /// Rebuilds the model, passing every trainable scalar through `param` in
    /// layout order; fixed quantities are converted as constants.
    fn rebuild<U: Scalar>(&self, mut param: impl FnMut(T) -> U) -> DgpModel<U> {
        let cst = |v: T| U::cst(v.val());
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let inducing = if layer.train_inducing {
                    layer.inducing.map(&mut param)
                } else {
                    layer.inducing.map(cst)
                };
                let q_mu = layer.q_mu.map(&mut param);
                let q_sqrt = layer
                    .q_sqrt
                    .iter()
                    .map(|raw| {
                        let n = raw.rows();
                        let mut out = Mat::zeros(n, n);
                        for i in 0..n {
                            for j in 0..=i {
                                out[(i, j)] = param(raw[(i, j)]);
                            }
                        }
                        out
                    })
                    .collect();
                let kernel = KernelParams {
                    log_variance: param(layer.kernel.log_variance),
                    log_lengthscales: layer.kernel.log_lengthscales.iter().map(|&v| param(v)).collect(),
                };
                LayerState {
                    inducing,
                    q_mu,
                    q_sqrt,
                    kernel,
                    mean_fn: layer.mean_fn.cast(),
                    whiten: layer.whiten,
                    train_inducing: layer.train_inducing,
                }
            })
            .collect();
        let likelihood = LikelihoodParams {
            log_noise_variance: param(self.likelihood.log_noise_variance),
            output_dim: self.likelihood.output_dim,
        };
        DgpModel { layers, likelihood }
    }

    /// Trainable parameters in unconstrained form.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        let _ = self.rebuild(|v: T| {
            out.push(v);
            v
        });
        out
    }

    /// Same structure with the trainable parameters replaced by `flat`.
    pub fn with_params<U: Scalar>(&self, flat: &[U]) -> Result<DgpModel<U>> {
        let expected = self.layout().len();
        if flat.len() != expected {
            return Err(GviError::DimensionMismatch {
                context: "flat parameter vector",
                expected,
                found: flat.len(),
            });
        }
        let mut it = flat.iter();
        Ok(self.rebuild(|_| *it.next().expect("length checked")))
    }

    /// Value conversion without gradient tracking.
    pub fn cast<U: Scalar>(&self) -> DgpModel<U> {
        self.rebuild(|v| U::cst(v.val()))
    }
}

impl DgpModel<f64> {
    /// Initializes a model for inputs `x` and `output_dim` targets.
    ///
    /// Inducing inputs of the first layer are a seeded random subset of the
    /// rows of `x` (all rows, in order, when `inducing >= n`). Hidden layers
    /// use a fixed linear mean function: the identity when widths agree, the
    /// leading principal directions of the layer inputs when narrowing, and a
    /// zero-padded identity when widening. Deeper inducing inputs are the
    /// previous ones mapped through these mean functions.
    pub fn init(x: &Mat<f64>, output_dim: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = x.rows();
        let input_dim = x.cols();
        if n == 0 || input_dim == 0 {
            return Err(GviError::InvalidModel("training inputs are empty".into()));
        }
        if output_dim == 0 {
            return Err(GviError::InvalidModel("output_dim must be >= 1".into()));
        }
        let m = cfg.inducing.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        if m < n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(m);
            idx.sort_unstable();
        }
        let mut z = x.select_rows(&idx);
        let mut h = x.clone();

        let hidden = cfg.hidden_width.unwrap_or_else(|| input_dim.min(MAX_HIDDEN_WIDTH));
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat_n(hidden, cfg.layers - 1));
        widths.push(output_dim);

        let diag_raw = softplus_inv(cfg.q_sqrt_variance.sqrt());
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (din, dout) = (widths[l], widths[l + 1]);
            let last = l + 1 == cfg.layers;
            let mean_fn = if last {
                MeanFunction::Zero
            } else {
                MeanFunction::Linear {
                    weights: projection(&h, dout)?,
                }
            };
            let q_sqrt = (0..dout)
                .map(|_| Mat::from_fn(m, m, |i, j| if i == j { diag_raw } else { 0.0 }))
                .collect();
            let next_z = mean_fn.apply(&z, dout)?;
            let next_h = mean_fn.apply(&h, dout)?;
            layers.push(LayerState {
                inducing: z,
                q_mu: Mat::zeros(m, dout),
                q_sqrt,
                kernel: KernelParams::unit(din),
                mean_fn,
                whiten: cfg.whiten,
                train_inducing: cfg.train_inducing,
            });
            z = next_z;
            h = next_h;
        }
        let model = DgpModel {
            layers,
            likelihood: LikelihoodParams::new(cfg.noise_variance, output_dim)?,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Fixed linear map from the columns of `h` to `dout` columns.
fn projection(h: &Mat<f64>, dout: usize) -> Result<Mat<f64>> {
    let din = h.cols();
    if din == dout {
        return Ok(Mat::identity(din));
    }
    if din < dout {
        return Ok(Mat::from_fn(din, dout, |i, j| if i == j { 1.0 } else { 0.0 }));
    }
    let n = h.rows() as f64;
    let means: Vec<f64> = (0..din).map(|j| h.column(j).iter().sum::<f64>() / n).collect();
    let cov = Mat::from_fn(din, din, |a, b| {
        (0..h.rows())
            .map(|i| (h[(i, a)] - means[a]) * (h[(i, b)] - means[b]))
            .sum::<f64>()
            / n
    });
    let (_, vecs) = symmetric_eigen(&cov)?;
    Ok(Mat::from_fn(din, dout, |i, j| vecs[(i, j)]))
}

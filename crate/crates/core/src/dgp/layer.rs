use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::kernel::{kernel_diag, kernel_matrix, KernelParams};
use crate::linalg::{cholesky_psd, dot, tri_solve, CholFactor, Mat, SpdMatrix, DEFAULT_JITTER};
use crate::scalar::{softplus, Scalar};

/// Marginal variances are clamped from below before any square root.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Prior mean function of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction<T> {
    Zero,
    /// `x ↦ x·W` with a fixed `W` of shape (input width × output width).
    Linear { weights: Mat<T> },
}

impl<T: Scalar> MeanFunction<T> {
    pub fn apply(&self, x: &Mat<T>, output_dim: usize) -> Result<Mat<T>> {
        match self {
            MeanFunction::Zero => Ok(Mat::zeros(x.rows(), output_dim)),
            MeanFunction::Linear { weights } => x.matmul(weights),
        }
    }

    pub fn cast<U: Scalar>(&self) -> MeanFunction<U> {
        match self {
            MeanFunction::Zero => MeanFunction::Zero,
            MeanFunction::Linear { weights } => MeanFunction::Linear {
                weights: weights.cast(),
            },
        }
    }
}

/// One sparse-GP layer with inducing inputs and a Gaussian `q(U)` per output column.
///
/// `q_sqrt[c]` holds the unconstrained square-root factor of `S_c`: the strict
/// lower triangle is free and the diagonal is passed through softplus. The
/// upper triangle is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerState<T> {
    pub inducing: Mat<T>,
    pub q_mu: Mat<T>,
    pub q_sqrt: Vec<Mat<T>>,
    pub kernel: KernelParams<T>,
    pub mean_fn: MeanFunction<T>,
    pub whiten: bool,
    pub train_inducing: bool,
}

impl<T: Scalar> LayerState<T> {
    pub fn input_dim(&self) -> usize {
        self.inducing.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.q_mu.cols()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_inducing();
        if m == 0 {
            return Err(GviError::InvalidModel("layer needs at least one inducing point".into()));
        }
        if self.q_mu.rows() != m {
            return Err(GviError::DimensionMismatch {
                context: "q_mu rows",
                expected: m,
                found: self.q_mu.rows(),
            });
        }
        if self.q_sqrt.len() != self.output_dim() {
            return Err(GviError::DimensionMismatch {
                context: "q_sqrt count",
                expected: self.output_dim(),
                found: self.q_sqrt.len(),
            });
        }
        for s in &self.q_sqrt {
            if s.shape() != (m, m) {
                return Err(GviError::DimensionMismatch {
                    context: "q_sqrt shape",
                    expected: m,
                    found: s.rows(),
                });
            }
        }
        if self.kernel.input_dim() != self.input_dim() {
            return Err(GviError::DimensionMismatch {
                context: "kernel lengthscales",
                expected: self.input_dim(),
                found: self.kernel.input_dim(),
            });
        }
        if let MeanFunction::Linear { weights } = &self.mean_fn {
            if weights.shape() != (self.input_dim(), self.output_dim()) {
                return Err(GviError::DimensionMismatch {
                    context: "mean function weights",
                    expected: self.input_dim() * self.output_dim(),
                    found: weights.rows() * weights.cols(),
                });
            }
        }
        Ok(())
    }

    /// Cholesky factor of `S_c`.
    pub fn s_factor(&self, column: usize) -> Result<CholFactor<T>> {
        let raw = &self.q_sqrt[column];
        let n = raw.rows();
        let lower = Mat::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => raw[(i, j)],
            std::cmp::Ordering::Equal => softplus(raw[(i, i)]),
            std::cmp::Ordering::Less => T::zero(),
        });
        CholFactor::from_lower(lower)
    }

    /// Cholesky factor of `K(Z, Z)` with the default jitter added.
    pub fn kzz_chol(&self) -> Result<CholFactor<T>> {
        let k = kernel_matrix(&self.kernel, &self.inducing, &self.inducing)?;
        let jitter = T::cst(DEFAULT_JITTER) * self.kernel.variance();
        cholesky_psd(&SpdMatrix::new(k.add_diagonal(jitter))?, DEFAULT_JITTER)
    }

    /// Prior mean at the inducing inputs, `mean_fn(Z)`.
    pub fn inducing_prior_mean(&self) -> Result<Mat<T>> {
        self.mean_fn.apply(&self.inducing, self.output_dim())
    }

    pub fn cache(&self) -> Result<LayerCache<T>> {
        Ok(LayerCache {
            kzz_chol: self.kzz_chol()?,
            s_factors: (0..self.output_dim())
                .map(|c| self.s_factor(c))
                .collect::<Result<_>>()?,
            mean_z: self.inducing_prior_mean()?,
        })
    }

    /// Sets the raw square-root factor so that `S_c = lower·lowerᵀ`.
    pub fn set_s_factor(&mut self, column: usize, lower: &Mat<f64>) -> Result<()> {
        let m = self.num_inducing();
        if lower.shape() != (m, m) {
            return Err(GviError::DimensionMismatch {
                context: "set_s_factor",
                expected: m,
                found: lower.rows(),
            });
        }
        self.q_sqrt[column] = Mat::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => T::cst(lower[(i, j)]),
            std::cmp::Ordering::Equal => T::cst(crate::scalar::softplus_inv(lower[(i, i)])),
            std::cmp::Ordering::Less => T::zero(),
        });
        Ok(())
    }
}

/// Per-layer quantities shared by every sample path of one evaluation.
#[derive(Clone, Debug)]
pub struct LayerCache<T> {
    pub kzz_chol: CholFactor<T>,
    pub s_factors: Vec<CholFactor<T>>,
    pub mean_z: Mat<T>,
}

/// Per-point means and marginal variances (batch × width).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments<T> {
    pub mean: Mat<T>,
    pub var: Mat<T>,
}

impl<T: Scalar> GaussianMoments<T> {
    pub fn to_f64(&self) -> GaussianMoments<f64> {
        GaussianMoments {
            mean: self.mean.to_f64(),
            var: self.var.to_f64(),
        }
    }
}

/// Marginal moments of the layer output at each input row.
///
/// With `B = L_zz⁻¹ K(Z, X)` and `a = B` (whitened) or `a = L_zz⁻ᵀ B`:
/// `mean_c = mean_fn(x) + aᵀ(m_c − [mean_fn(Z)]_c)` and
/// `var_c = k(x, x) − ‖B_x‖² + ‖R_cᵀ a_x‖²`, where `S_c = R_c R_cᵀ`. In the
/// whitened case the prior mean shift at `Z` is absorbed by the
/// parameterization, so `m_c` is used as is.
pub fn layer_moments<T: Scalar>(layer: &LayerState<T>, inputs: &Mat<T>) -> Result<GaussianMoments<T>> {
    let cache = layer.cache()?;
    layer_moments_cached(layer, &cache, inputs)
}

pub fn layer_moments_cached<T: Scalar>(
    layer: &LayerState<T>,
    cache: &LayerCache<T>,
    inputs: &Mat<T>,
) -> Result<GaussianMoments<T>> {
    if inputs.cols() != layer.input_dim() {
        return Err(GviError::DimensionMismatch {
            context: "layer inputs",
            expected: layer.input_dim(),
            found: inputs.cols(),
        });
    }
    let n = inputs.rows();
    let m = layer.num_inducing();
    let out = layer.output_dim();
    let kzx = kernel_matrix(&layer.kernel, &layer.inducing, inputs)?;
    let b = tri_solve(&cache.kzz_chol, &kzx, false)?;
    let a = if layer.whiten {
        b.clone()
    } else {
        tri_solve(&cache.kzz_chol, &b, true)?
    };
    let kdiag = kernel_diag(&layer.kernel, inputs)?;
    let mean_x = layer.mean_fn.apply(inputs, out)?;

    // column-major views of a and b: one length-m vector per input point
    let a_cols: Vec<Vec<T>> = (0..n).map(|i| a.column(i)).collect();
    let b_sq: Vec<T> = (0..n)
        .map(|i| (0..m).map(|k| b[(k, i)] * b[(k, i)]).sum())
        .collect();

    let floor = T::cst(VARIANCE_FLOOR);
    let mut mean = Mat::zeros(n, out);
    let mut var = Mat::zeros(n, out);
    for c in 0..out {
        let mut mc = layer.q_mu.column(c);
        if !layer.whiten {
            for (k, v) in mc.iter_mut().enumerate() {
                *v -= cache.mean_z[(k, c)];
            }
        }
        let r = cache.s_factors[c].lower();
        for i in 0..n {
            let ai = &a_cols[i];
            mean[(i, c)] = mean_x[(i, c)] + dot(ai, &mc);
            // ‖Rᵀ a‖² with R lower triangular: (Rᵀa)_k = Σ_{j≥k} R_jk a_j
            let mut quad = T::zero();
            for k in 0..m {
                let mut s = T::zero();
                for j in k..m {
                    s += r[(j, k)] * ai[j];
                }
                quad += s * s;
            }
            let v = kdiag[i] - b_sq[i] + quad;
            var[(i, c)] = v.max(floor);
        }
    }
    Ok(GaussianMoments { mean, var })
}

/// Reparameterized draw `mean + sqrt(var) ⊙ noise`, elementwise.
pub fn layer_sample<T: Scalar>(moments: &GaussianMoments<T>, noise: &Mat<f64>) -> Result<Mat<T>> {
    if noise.shape() != moments.mean.shape() {
        return Err(GviError::DimensionMismatch {
            context: "layer_sample noise",
            expected: moments.mean.rows() * moments.mean.cols(),
            found: noise.rows() * noise.cols(),
        });
    }
    let floor = T::cst(VARIANCE_FLOOR);
    Ok(Mat::from_fn(noise.rows(), noise.cols(), |i, j| {
        let sd = moments.var[(i, j)].max(floor).sqrt();
        moments.mean[(i, j)] + sd * T::cst(noise[(i, j)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_layer(whiten: bool) -> LayerState<f64> {
        let z = Mat::<f64>::from_rows(&[vec![-1.0], vec![0.0], vec![1.5]]).unwrap();
        let mut layer = LayerState {
            inducing: z,
            q_mu: Mat::<f64>::from_rows(&[vec![0.2], vec![-0.4], vec![1.0]]).unwrap(),
            q_sqrt: vec![Mat::zeros(3, 3)],
            kernel: KernelParams::new(1.3, &[0.8]).unwrap(),
            mean_fn: MeanFunction::Zero,
            whiten,
            train_inducing: true,
        };
        layer.set_s_factor(0, &Mat::diag(&[0.3, 0.2, 0.5])).unwrap();
        layer
    }

    #[test]
    fn s_factor_round_trip() {
        let layer = toy_layer(true);
        let f = layer.s_factor(0).unwrap();
        assert!((f.lower()[(0, 0)] - 0.3).abs() < 1e-14);
        assert!((f.lower()[(2, 2)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sample_with_zero_noise_is_mean() {
        let layer = toy_layer(true);
        let x = Mat::<f64>::from_rows(&[vec![0.3], vec![-2.0]]).unwrap();
        let mom = layer_moments(&layer, &x).unwrap();
        let s = layer_sample(&mom, &Mat::zeros(2, 1)).unwrap();
        assert_eq!(s, mom.mean);
    }

    #[test]
    fn sample_at_variance_floor() {
        let mom = GaussianMoments {
            mean: Mat::<f64>::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            var: Mat::zeros(1, 2),
        };
        let noise = Mat::<f64>::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let s = layer_sample(&mom, &noise).unwrap();
        assert!((s[(0, 0)] - (1.0 + 1e-5 * 0.5)).abs() < 1e-18);
        assert!((s[(0, 1)] - (2.0 - 1e-5 * 2.0)).abs() < 1e-18);
    }

    #[test]
    fn sample_noise_shape_checked() {
        let mom = GaussianMoments {
            mean: Mat::<f64>::zeros(2, 1),
            var: Mat::zeros(2, 1),
        };
        assert!(layer_sample(&mom, &Mat::zeros(1, 1)).is_err());
    }

    #[test]
    fn input_width_checked() {
        let layer = toy_layer(false);
        assert!(matches!(
            layer_moments(&layer, &Mat::zeros(2, 2)),
            Err(GviError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn malformed_layer_fails_validation() {
        let mut layer = toy_layer(true);
        layer.q_sqrt.push(Mat::zeros(3, 3));
        assert!(layer.validate().is_err());
        let mut layer = toy_layer(true);
        layer.kernel = KernelParams::unit(2);
        assert!(layer.validate().is_err());
    }
}

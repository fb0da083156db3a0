use super::model::DgpModel;
use super::objective::model_forward;
use crate::error::{GviError, Result};
use crate::linalg::Mat;
use crate::scalar::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Equal-weight Gaussian mixture over sample paths, per test point.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive {
    /// Mixture mean (points × outputs).
    pub mean: Mat<f64>,
    /// Mixture variance, including the likelihood noise.
    pub var: Mat<f64>,
    pub path_means: Vec<Mat<f64>>,
    /// Per-path predictive variances, `var_f + σ²`.
    pub path_vars: Vec<Mat<f64>>,
}

impl Predictive {
    pub fn num_points(&self) -> usize {
        self.mean.rows()
    }

    /// `log (1/P) Σ_p N(y_i; μ_p, diag(v_p))` for each row of `y`.
    pub fn log_density(&self, y: &Mat<f64>) -> Result<Vec<f64>> {
        if y.shape() != self.mean.shape() {
            return Err(GviError::DimensionMismatch {
                context: "predictive targets",
                expected: self.mean.rows() * self.mean.cols(),
                found: y.rows() * y.cols(),
            });
        }
        let log_p = (self.path_means.len() as f64).ln();
        Ok((0..y.rows())
            .map(|i| {
                let per_path: Vec<f64> = self
                    .path_means
                    .iter()
                    .zip(&self.path_vars)
                    .map(|(m, v)| {
                        (0..y.cols())
                            .map(|j| {
                                let r = y[(i, j)] - m[(i, j)];
                                -0.5 * (LN_2PI + v[(i, j)].ln() + r * r / v[(i, j)])
                            })
                            .sum()
                    })
                    .collect();
                log_sum_exp(&per_path) - log_p
            })
            .collect())
    }
}

/// Mixture-over-paths predictive distribution at `x_star`.
pub fn predict(model: &DgpModel<f64>, x_star: &Mat<f64>, n_samples: usize, seed: u64) -> Result<Predictive> {
    let paths = model_forward(model, x_star, n_samples, seed)?;
    let noise = model.likelihood.noise_variance();
    let (n, d) = (x_star.rows(), model.output_dim());
    let p = paths.len() as f64;
    let path_means: Vec<Mat<f64>> = paths.iter().map(|m| m.mean.clone()).collect();
    let path_vars: Vec<Mat<f64>> = paths.iter().map(|m| m.var.map(|v| v + noise)).collect();
    let mean = Mat::from_fn(n, d, |i, j| path_means.iter().map(|m| m[(i, j)]).sum::<f64>() / p);
    let var = Mat::from_fn(n, d, |i, j| {
        let within = path_vars.iter().map(|v| v[(i, j)]).sum::<f64>() / p;
        let between = path_means.iter().map(|m| (m[(i, j)] - mean[(i, j)]).powi(2)).sum::<f64>() / p;
        within + between
    });
    Ok(Predictive {
        mean,
        var,
        path_means,
        path_vars,
    })
}

//! Squared-exponential kernel with one lengthscale per input dimension (ARD).

use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// RBF-ARD hyperparameters, stored on the log scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub log_variance: T,
    pub log_lengthscales: Vec<T>,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(variance: f64, lengthscales: &[f64]) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(GviError::InvalidHyperparameter {
                name: "signal_variance",
                value: variance,
                reason: "must be finite and > 0",
            });
        }
        if let Some(&bad) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(GviError::InvalidHyperparameter {
                name: "lengthscale",
                value: bad,
                reason: "must be finite and > 0",
            });
        }
        Ok(KernelParams {
            log_variance: T::cst(variance.ln()),
            log_lengthscales: lengthscales.iter().map(|l| T::cst(l.ln())).collect(),
        })
    }

    /// Unit variance and unit lengthscales.
    pub fn unit(input_dim: usize) -> Self {
        KernelParams {
            log_variance: T::zero(),
            log_lengthscales: vec![T::zero(); input_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn variance(&self) -> T {
        self.log_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<T> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    fn check(&self, x: &Mat<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(GviError::DimensionMismatch {
                context: "kernel input dimension",
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Divides every input coordinate by its lengthscale.
    fn scaled(&self, x: &Mat<T>) -> Mat<T> {
        let inv: Vec<T> = self.log_lengthscales.iter().map(|l| (-*l).exp()).collect();
        Mat::from_fn(x.rows(), x.cols(), |i, d| x[(i, d)] * inv[d])
    }
}

/// Cross-covariance matrix `K(a, b)`.
pub fn kernel_matrix<T: Scalar>(params: &KernelParams<T>, a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    params.check(a)?;
    params.check(b)?;
    let sa = params.scaled(a);
    let sb = params.scaled(b);
    let var = params.variance();
    let half = T::cst(0.5);
    let symmetric = a == b;
    let mut k = Mat::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let start = if symmetric { i } else { 0 };
        for j in start..b.rows() {
            let r2: T = sa
                .row(i)
                .iter()
                .zip(sb.row(j))
                .map(|(&u, &v)| {
                    let d = u - v;
                    d * d
                })
                .sum();
            let v = var * (-half * r2).exp();
            k[(i, j)] = v;
            if symmetric {
                k[(j, i)] = v;
            }
        }
    }
    Ok(k)
}

/// Prior variances `k(a_i, a_i)`, which for a stationary kernel are all the signal variance.
pub fn kernel_diag<T: Scalar>(params: &KernelParams<T>, a: &Mat<T>) -> Result<Vec<T>> {
    params.check(a)?;
    Ok(vec![params.variance(); a.rows()])
}

#![allow(dead_code)]

use dgp_gvi::linalg::Mat;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Composite Simpson rule with `n` (even) intervals on `[a, b]`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt()
}

pub fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn col(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Random SPD matrix `W Wᵀ + ridge·I`.
pub fn random_spd(d: usize, ridge: f64, r: &mut ChaCha8Rng) -> Mat<f64> {
    let w = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    from_na(&(&w * w.transpose() + DMatrix::identity(d, d) * ridge))
}

pub fn random_vec(d: usize, scale: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-scale..scale)).collect()
}

/// Squared-exponential kernel written out independently of the library.
pub fn rbf(a: &DMatrix<f64>, b: &DMatrix<f64>, var: f64, ls: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let r2: f64 = (0..a.ncols()).map(|d| ((a[(i, d)] - b[(j, d)]) / ls[d]).powi(2)).sum();
        var * (-0.5 * r2).exp()
    })
}

/// log N(x; mean, cov) via nalgebra's Cholesky.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let ch = cov.clone().cholesky().expect("pd");
    let diff = x - mean;
    let sol = ch.solve(&diff);
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (diff.dot(&sol) + logdet + x.len() as f64 * std::f64::consts::TAU.ln())
}

/// KL(N(m0,S0) ‖ N(m1,S1)) with nalgebra inverses.
pub fn kl_dense(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
    let inv1 = s1.clone().try_inverse().expect("invertible");
    let d = m0.len() as f64;
    let diff = m1 - m0;
    0.5 * ((&inv1 * s0).trace() + diff.dot(&(&inv1 * &diff)) - d + s1.determinant().ln() - s0.determinant().ln())
}

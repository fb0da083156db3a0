//! Uncertainty quantifiers between multivariate Gaussians.
//!
//! The Rényi divergence uses the order-α parameterization
//! `D(q‖p) = 1/(α(α−1)) · log ∫ q^α p^{1−α}`, which is nonnegative for
//! α ∈ (0, 1) and vanishes iff `q = p`; it tends to the KLD as α → 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::linalg::{cholesky_psd, dot, logdet, CholFactor, Mat, SpdMatrix};
use crate::scalar::Scalar;

/// A multivariate normal `N(mean, L·Lᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDist<T> {
    pub mean: Vec<T>,
    pub cov: CholFactor<T>,
}

impl<T: Scalar> GaussianDist<T> {
    pub fn new(mean: Vec<T>, cov: CholFactor<T>) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(GviError::DimensionMismatch {
                context: "GaussianDist::new",
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        Ok(GaussianDist { mean, cov })
    }

    /// Factorizes `cov` (no jitter) and builds the distribution.
    pub fn from_covariance(mean: Vec<T>, cov: Mat<T>) -> Result<Self> {
        let chol = cholesky_psd(&SpdMatrix::new(cov)?, 0.0)?;
        Self::new(mean, chol)
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDist {
            mean: vec![T::zero(); dim],
            cov: CholFactor::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density at `x`.
    pub fn log_pdf(&self, x: &[T]) -> Result<T> {
        let diff: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect();
        let z = self.cov.solve_lower_vec(&diff)?;
        let d = T::cst(self.dim() as f64);
        let half = T::cst(0.5);
        Ok(-half * (dot(&z, &z) + logdet(&self.cov) + d * T::cst(std::f64::consts::TAU.ln())))
    }
}

/// Which divergence penalizes departure of the variational posterior from the prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "QuantifierRepr")]
pub enum QuantifierSpec {
    Kld,
    ScaledKld { w: f64 },
    Renyi { alpha: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum QuantifierRepr {
    Kld {},
    ScaledKld { w: f64 },
    Renyi { alpha: f64 },
}

impl From<QuantifierRepr> for QuantifierSpec {
    fn from(r: QuantifierRepr) -> Self {
        match r {
            QuantifierRepr::Kld {} => QuantifierSpec::Kld,
            QuantifierRepr::ScaledKld { w } => QuantifierSpec::ScaledKld { w },
            QuantifierRepr::Renyi { alpha } => QuantifierSpec::Renyi { alpha },
        }
    }
}

impl QuantifierSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            QuantifierSpec::Kld => Ok(()),
            QuantifierSpec::ScaledKld { w } => {
                if w > 0.0 && w.is_finite() {
                    Ok(())
                } else {
                    Err(GviError::InvalidHyperparameter {
                        name: "w",
                        value: w,
                        reason: "scaled KLD weight must be finite and > 0",
                    })
                }
            }
            QuantifierSpec::Renyi { alpha } => check_alpha(alpha),
        }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match *self {
            QuantifierSpec::Kld => "kld".into(),
            QuantifierSpec::ScaledKld { w } => format!("scaled_kld(w={w})"),
            QuantifierSpec::Renyi { alpha } => format!("renyi(alpha={alpha})"),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(GviError::AlphaOutOfRange(alpha))
    }
}

fn check_dims<T: Scalar>(q: &GaussianDist<T>, p: &GaussianDist<T>) -> Result<()> {
    if q.dim() != p.dim() {
        return Err(GviError::DimensionMismatch {
            context: "divergence",
            expected: q.dim(),
            found: p.dim(),
        });
    }
    Ok(())
}

/// `KLD(q‖p)` in closed form.
pub fn kld_gauss<T: Scalar>(q: &GaussianDist<T>, p: &GaussianDist<T>) -> Result<T> {
    check_dims(q, p)?;
    let d = q.dim();
    // tr(Σp⁻¹Σq) = ‖Lp⁻¹ Lq‖²_F
    let mut trace = T::zero();
    for c in 0..d {
        let col: Vec<T> = (0..d).map(|r| q.cov.lower()[(r, c)]).collect();
        let x = p.cov.solve_lower_vec(&col)?;
        trace += dot(&x[c..], &x[c..]);
    }
    let delta: Vec<T> = p.mean.iter().zip(&q.mean).map(|(&a, &b)| a - b).collect();
    let z = p.cov.solve_lower_vec(&delta)?;
    let maha = dot(&z, &z);
    let half = T::cst(0.5);
    Ok(half * (trace + maha - T::cst(d as f64) + logdet(&p.cov) - logdet(&q.cov)))
}

/// Rényi divergence of order `alpha ∈ (0, 1)` in closed form.
///
/// The precision-weighted display with `Λ = αΣq⁻¹ + (1−α)Σp⁻¹`,
///
/// `D = 1/(2α(1−α)) · { α[μqᵀΣq⁻¹μq + ln|Σq|] + (1−α)[μpᵀΣp⁻¹μp + ln|Σp|] − [bᵀΛ⁻¹b − ln|Λ|] }`
/// with `b = αΣq⁻¹μq + (1−α)Σp⁻¹μp`, is evaluated through the equivalent
/// covariance mixture `M = αΣp + (1−α)Σq` (using `Λ⁻¹ = Σq M⁻¹ Σp`):
///
/// `D = ½ ΔμᵀM⁻¹Δμ + (ln|M| − (1−α)ln|Σq| − α ln|Σp|) / (2α(1−α))`.
///
/// No covariance is inverted, which keeps the value and its gradient accurate
/// when `Σq` is nearly singular.
pub fn renyi_alpha_gauss<T: Scalar>(q: &GaussianDist<T>, p: &GaussianDist<T>, alpha: f64) -> Result<T> {
    check_alpha(alpha)?;
    check_dims(q, p)?;
    let a = T::cst(alpha);
    let ac = T::cst(1.0 - alpha);
    let mix = p.cov.reconstruct().scale(a).add(&q.cov.reconstruct().scale(ac))?;
    let mix_chol = cholesky_psd(&SpdMatrix::new(mix)?, 0.0)?;
    let delta: Vec<T> = q.mean.iter().zip(&p.mean).map(|(&x, &y)| x - y).collect();
    let z = mix_chol.solve_lower_vec(&delta)?;
    let half = T::cst(0.5);
    let norm = T::cst(1.0 / (2.0 * alpha * (1.0 - alpha)));
    Ok(half * dot(&z, &z) + norm * (logdet(&mix_chol) - ac * logdet(&q.cov) - a * logdet(&p.cov)))
}

/// Dispatches on the quantifier kind.
pub fn apply_quantifier<T: Scalar>(
    spec: &QuantifierSpec,
    q: &GaussianDist<T>,
    p: &GaussianDist<T>,
) -> Result<T> {
    spec.validate()?;
    match *spec {
        QuantifierSpec::Kld => kld_gauss(q, p),
        QuantifierSpec::ScaledKld { w } => Ok(kld_gauss(q, p)? / T::cst(w)),
        QuantifierSpec::Renyi { alpha } => renyi_alpha_gauss(q, p, alpha),
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.estimate == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - value).abs() / self.std_error
        }
    }
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Plain Monte-Carlo estimate of the divergence using draws from `q`.
///
/// KLD averages `log q − log p`; the Rényi divergence estimates
/// `E_q[(p/q)^{1−α}]` and propagates its standard error through the log by
/// the delta method.
///
/// # Panics
/// If `n_samples < 10_000` or the dimensions of `q` and `p` differ.
pub fn mc_divergence_oracle(
    q: &GaussianDist<f64>,
    p: &GaussianDist<f64>,
    spec: &QuantifierSpec,
    n_samples: usize,
    seed: u64,
) -> McEstimate {
    assert!(n_samples >= 10_000, "oracle needs at least 1e4 samples");
    assert_eq!(q.dim(), p.dim(), "oracle dimension mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = q.dim();
    let mut log_ratio = Vec::with_capacity(n_samples);
    let mut eps = vec![0.0; d];
    for _ in 0..n_samples {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let x: Vec<f64> = (0..d)
            .map(|i| q.mean[i] + dot(&q.cov.lower().row(i)[..=i], &eps[..=i]))
            .collect();
        let lq = q.log_pdf(&x).expect("dims checked");
        let lp = p.log_pdf(&x).expect("dims checked");
        log_ratio.push(lq - lp);
    }
    match *spec {
        QuantifierSpec::Kld | QuantifierSpec::ScaledKld { .. } => {
            let w = match *spec {
                QuantifierSpec::ScaledKld { w } => w,
                _ => 1.0,
            };
            let (m, se) = mean_and_se(&log_ratio);
            McEstimate {
                estimate: m / w,
                std_error: se / w,
            }
        }
        QuantifierSpec::Renyi { alpha } => {
            let ratios: Vec<f64> = log_ratio
                .iter()
                .map(|lr| (-(1.0 - alpha) * lr).exp())
                .collect();
            let (m, se) = mean_and_se(&ratios);
            let scale = 1.0 / (alpha * (alpha - 1.0));
            McEstimate {
                estimate: scale * m.ln(),
                std_error: scale.abs() * se / m,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(mean: f64, var: f64) -> GaussianDist<f64> {
        GaussianDist::from_covariance(vec![mean], Mat::diag(&[var])).unwrap()
    }

    #[test]
    fn kld_identity_and_shift() {
        let q = one_d(0.0, 1.0);
        assert_eq!(kld_gauss(&q, &q).unwrap(), 0.0);
        let p = one_d(1.0, 1.0);
        assert!((kld_gauss(&q, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn renyi_identity_and_shift() {
        let q = one_d(0.0, 1.0);
        let p = one_d(1.0, 1.0);
        assert!(renyi_alpha_gauss(&q, &q, 0.3).unwrap().abs() < 1e-14);
        assert!((renyi_alpha_gauss(&q, &p, 0.5).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn alpha_outside_unit_interval_rejected() {
        let q = one_d(0.0, 1.0);
        for a in [0.0, 1.0, 1.5, -0.2] {
            assert!(matches!(
                renyi_alpha_gauss(&q, &q, a),
                Err(GviError::AlphaOutOfRange(_))
            ));
        }
        assert!(QuantifierSpec::Renyi { alpha: 1.5 }.validate().is_err());
        assert!(QuantifierSpec::ScaledKld { w: 0.0 }.validate().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let q = GaussianDist::<f64>::standard(2);
        let p = GaussianDist::<f64>::standard(3);
        assert!(matches!(kld_gauss(&q, &p), Err(GviError::DimensionMismatch { .. })));
        assert!(renyi_alpha_gauss(&q, &p, 0.5).is_err());
    }

    #[test]
    fn quantifier_dispatch() {
        let q = one_d(0.0, 1.0);
        let p = one_d(1.0, 1.0);
        let scaled = apply_quantifier(&QuantifierSpec::ScaledKld { w: 2.0 }, &q, &p).unwrap();
        assert!((scaled - 0.25).abs() < 1e-15);
        assert_eq!(
            apply_quantifier(&QuantifierSpec::Kld, &q, &p).unwrap(),
            kld_gauss(&q, &p).unwrap()
        );
        assert_eq!(
            apply_quantifier(&QuantifierSpec::Renyi { alpha: 0.5 }, &q, &p).unwrap(),
            renyi_alpha_gauss(&q, &p, 0.5).unwrap()
        );
    }

    #[test]
    fn oracle_at_equality_is_zero() {
        let q = GaussianDist::<f64>::from_covariance(
            vec![0.3, -1.0],
            Mat::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.7]]).unwrap(),
        )
        .unwrap();
        for spec in [QuantifierSpec::Kld, QuantifierSpec::Renyi { alpha: 0.5 }] {
            let est = mc_divergence_oracle(&q, &q, &spec, 10_000, 1);
            assert!(est.estimate.abs() < 1e-12, "{est:?}");
        }
    }

    #[test]
    fn oracle_kld_one_d() {
        let est = mc_divergence_oracle(&one_d(0.0, 1.0), &one_d(1.0, 1.0), &QuantifierSpec::Kld, 100_000, 3);
        assert!(est.z_score(0.5) < 3.0, "{est:?}");
    }

    #[test]
    fn serde_round_trip_of_spec() {
        let s: QuantifierSpec = serde_json::from_str(r#"{"kind":"renyi","alpha":0.5}"#).unwrap();
        assert_eq!(s, QuantifierSpec::Renyi { alpha: 0.5 });
        let s: QuantifierSpec = serde_json::from_str(r#"{"kind":"kld"}"#).unwrap();
        assert_eq!(s, QuantifierSpec::Kld);
        assert!(serde_json::from_str::<QuantifierSpec>(r#"{"kind":"kld","w":2}"#).is_err());
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::autodiff::{gradient, Var};

    fn renyi_of(params: &[Var]) -> Var {
        // q factor from 3 entries of a 2x2 lower triangle, p = N(0, I)
        let lower = Mat::from_vec(2, 2, vec![params[0], Var::constant(0.0), params[1], params[2]]).unwrap();
        let q = GaussianDist::new(vec![params[3], params[4]], CholFactor::from_lower(lower).unwrap()).unwrap();
        let p = GaussianDist::standard(2);
        renyi_alpha_gauss(&q, &p, 0.5).unwrap()
    }

    #[test]
    fn renyi_gradient_matches_differences() {
        let x = [0.7, 0.3, 1.2, 0.4, -0.5];
        let (_, g) = gradient(renyi_of, &x);
        for i in 0..x.len() {
            let h = 1e-6;
            let f = |d: f64| {
                let mut y = x;
                y[i] += d;
                let v: Vec<Var> = y.iter().map(|&v| Var::constant(v)).collect();
                renyi_of(&v).value()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{i}: {} vs {fd}", g[i]);
        }
    }
}

//! Expected losses under a Gaussian variational marginal with a Gaussian likelihood.
//!
//! For `p(y|f) = N(y; f, σ²I_d)` and a diagonal marginal `q(f) = N(μ, diag(s²))`
//! the negative log likelihood and the β/γ robust losses all have closed-form
//! expectations built from two ingredients:
//!
//! * `I(c) = ∫ p(y|f)^c dy = (2πσ²)^{−d(c−1)/2} c^{−d/2}`
//! * `E(c) = (1/c) E_q[p(y|f)^c]`
//!
//! Everything is evaluated in the log domain and only exponentiated at the end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::divergence::{mean_and_se, McEstimate};
use crate::error::{GviError, Result};
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default β and γ when none is given: close to the log-likelihood, mildly robust.
pub const DEFAULT_ROBUST_POWER: f64 = 1.05;

/// How the γ-loss normalizes by `I(γ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaNormalization {
    /// `−γ/(γ−1) · p^{γ−1} · I(γ)^{−(γ−1)/γ}`: the γ-cross-entropy form.
    #[default]
    CrossEntropy,
    /// `−γ/(γ−1) · p^{γ−1} · I(γ)^{−γ/(γ−1)}`: alternative exponent kept for comparison.
    InverseExponent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "LossSpecRepr")]
pub enum LossSpec {
    Nll,
    Beta {
        #[serde(default = "default_power")]
        beta: f64,
    },
    Gamma {
        #[serde(default = "default_power")]
        gamma: f64,
        #[serde(default)]
        normalization: GammaNormalization,
    },
}

// Unit variants of an internally tagged enum silently accept extra keys, so
// deserialization goes through struct variants that reject them.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LossSpecRepr {
    Nll {},
    Beta {
        #[serde(default = "default_power")]
        beta: f64,
    },
    Gamma {
        #[serde(default = "default_power")]
        gamma: f64,
        #[serde(default)]
        normalization: GammaNormalization,
    },
}

impl From<LossSpecRepr> for LossSpec {
    fn from(r: LossSpecRepr) -> Self {
        match r {
            LossSpecRepr::Nll {} => LossSpec::Nll,
            LossSpecRepr::Beta { beta } => LossSpec::Beta { beta },
            LossSpecRepr::Gamma { gamma, normalization } => LossSpec::Gamma { gamma, normalization },
        }
    }
}

fn default_power() -> f64 {
    DEFAULT_ROBUST_POWER
}

impl LossSpec {
    pub fn beta(beta: f64) -> Self {
        LossSpec::Beta { beta }
    }

    pub fn gamma(gamma: f64) -> Self {
        LossSpec::Gamma {
            gamma,
            normalization: GammaNormalization::CrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LossSpec::Nll => return Ok(()),
            LossSpec::Beta { beta } => ("beta", beta),
            LossSpec::Gamma { gamma, .. } => ("gamma", gamma),
        };
        if v > 1.0 && v.is_finite() {
            Ok(())
        } else {
            Err(GviError::InvalidHyperparameter {
                name,
                value: v,
                reason: "must be finite and > 1",
            })
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LossSpec::Nll => "nll",
            LossSpec::Beta { .. } => "beta",
            LossSpec::Gamma { .. } => "gamma",
        }
    }

    /// β or γ, if any.
    pub fn hyperparameter(&self) -> Option<f64> {
        match *self {
            LossSpec::Nll => None,
            LossSpec::Beta { beta } => Some(beta),
            LossSpec::Gamma { gamma, .. } => Some(gamma),
        }
    }
}

/// Isotropic Gaussian likelihood `N(y; f, σ²I_d)`, with σ² stored on the log scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams<T> {
    pub log_noise_variance: T,
    pub output_dim: usize,
}

impl<T: Scalar> LikelihoodParams<T> {
    pub fn new(noise_variance: f64, output_dim: usize) -> Result<Self> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(GviError::InvalidHyperparameter {
                name: "noise_variance",
                value: noise_variance,
                reason: "must be finite and > 0",
            });
        }
        Ok(LikelihoodParams {
            log_noise_variance: T::cst(noise_variance.ln()),
            output_dim,
        })
    }

    pub fn noise_variance(&self) -> T {
        self.log_noise_variance.exp()
    }
}

/// Diagonal Gaussian marginal `N(mean, diag(var))` of one output vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> MarginalMoments<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(GviError::DimensionMismatch {
                context: "MarginalMoments::new",
                expected: mean.len(),
                found: var.len(),
            });
        }
        Ok(MarginalMoments { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check<T: Scalar>(y: &[T], q: &MarginalMoments<T>, lik: &LikelihoodParams<T>) -> Result<()> {
    for (context, found) in [("observation", y.len()), ("marginal mean", q.mean.len()), ("marginal variance", q.var.len())] {
        if found != lik.output_dim {
            return Err(GviError::DimensionMismatch {
                context,
                expected: lik.output_dim,
                found,
            });
        }
    }
    Ok(())
}

fn check_power(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(GviError::NonPositivePower(c))
    }
}

/// `log I(c)`.
pub fn log_integral_i<T: Scalar>(c: f64, lik: &LikelihoodParams<T>) -> Result<T> {
    check_power(c)?;
    let d = lik.output_dim as f64;
    let log_two_pi_s2 = T::cst(LN_2PI) + lik.log_noise_variance;
    Ok(T::cst(-0.5 * d * (c - 1.0)) * log_two_pi_s2 - T::cst(0.5 * d * c.ln()))
}

/// `I(c) = ∫ N(y; f, σ²I_d)^c dy`, which does not depend on `f`.
pub fn integral_i<T: Scalar>(c: f64, lik: &LikelihoodParams<T>) -> Result<T> {
    Ok(log_integral_i(c, lik)?.exp())
}

/// `log E(c)` where `E(c) = (1/c) E_q[p(y|f)^c]`.
///
/// Per output dimension the precision-weighted combination of the tempered
/// likelihood and `q` gives
/// `log E_q[p^c] = −(c/2) log(2πσ²) − ½ log(1 + c s²/σ²) − ½ c (y−μ)² / (σ² + c s²)`,
/// which is the diagonal case of `(2πσ²)^{−dc/2} |Σ̃|^{½}|Σ|^{−½} exp{−½(c/σ² yᵀy + μᵀΣ⁻¹μ − μ̃ᵀΣ̃μ̃)}`
/// rearranged so that no large terms cancel as `s² → 0`.
pub fn log_expected_power_density<T: Scalar>(
    c: f64,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    check_power(c)?;
    check(y, q, lik)?;
    let cc = T::cst(c);
    let half = T::cst(0.5);
    let s2 = lik.noise_variance();
    let log_two_pi_s2 = T::cst(LN_2PI) + lik.log_noise_variance;
    let mut acc = -T::cst(c.ln());
    for j in 0..y.len() {
        let tempered_var = s2 + cc * q.var[j];
        let r = y[j] - q.mean[j];
        acc += -half * cc * log_two_pi_s2
            - half * (tempered_var / s2).ln()
            - half * cc * r * r / tempered_var;
    }
    Ok(acc)
}

pub fn expected_power_density<T: Scalar>(
    c: f64,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    Ok(log_expected_power_density(c, y, q, lik)?.exp())
}

/// `E_q[−log p(y|f)] = Σ_j ½ log(2πσ²) + ((y_j − μ_j)² + s_j²) / (2σ²)`.
pub fn expected_nll<T: Scalar>(y: &[T], q: &MarginalMoments<T>, lik: &LikelihoodParams<T>) -> Result<T> {
    check(y, q, lik)?;
    let half = T::cst(0.5);
    let s2 = lik.noise_variance();
    let log_two_pi_s2 = T::cst(LN_2PI) + lik.log_noise_variance;
    let mut acc = T::zero();
    for j in 0..y.len() {
        let r = y[j] - q.mean[j];
        acc += half * log_two_pi_s2 + (r * r + q.var[j]) / (s2 + s2);
    }
    Ok(acc)
}

/// `E_q[L^β] = −E(β−1) + I(β)/β`.
pub fn expected_beta_loss<T: Scalar>(
    beta: f64,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    LossSpec::beta(beta).validate()?;
    let e = expected_power_density(beta - 1.0, y, q, lik)?;
    let i = integral_i(beta, lik)?;
    Ok(i / T::cst(beta) - e)
}

/// `log(−E_q[L^γ])`. The γ-loss is strictly negative, so it is kept in log form.
pub fn log_neg_expected_gamma_loss<T: Scalar>(
    gamma: f64,
    normalization: GammaNormalization,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    LossSpec::gamma(gamma).validate()?;
    // log E(γ−1) already carries the 1/(γ−1) factor
    let log_e = log_expected_power_density(gamma - 1.0, y, q, lik)?;
    let log_i = log_integral_i(gamma, lik)?;
    let exponent = match normalization {
        GammaNormalization::CrossEntropy => (gamma - 1.0) / gamma,
        GammaNormalization::InverseExponent => gamma / (gamma - 1.0),
    };
    Ok(T::cst(gamma.ln()) + log_e - T::cst(exponent) * log_i)
}

/// `E_q[L^γ] = −γ · E(γ−1) · I(γ)^{−(γ−1)/γ}` (default normalization).
pub fn expected_gamma_loss<T: Scalar>(
    gamma: f64,
    normalization: GammaNormalization,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    Ok(-log_neg_expected_gamma_loss(gamma, normalization, y, q, lik)?.exp())
}

/// Closed-form expected loss for any [`LossSpec`].
pub fn expected_loss<T: Scalar>(
    spec: &LossSpec,
    y: &[T],
    q: &MarginalMoments<T>,
    lik: &LikelihoodParams<T>,
) -> Result<T> {
    match *spec {
        LossSpec::Nll => expected_nll(y, q, lik),
        LossSpec::Beta { beta } => expected_beta_loss(beta, y, q, lik),
        LossSpec::Gamma {
            gamma,
            normalization,
        } => expected_gamma_loss(gamma, normalization, y, q, lik),
    }
}

/// The loss at a single latent value `f`, evaluated from the likelihood density directly.
pub fn pointwise_loss(spec: &LossSpec, f: &[f64], y: &[f64], lik: &LikelihoodParams<f64>) -> Result<f64> {
    spec.validate()?;
    let s2 = lik.noise_variance();
    let log_p: f64 = y
        .iter()
        .zip(f)
        .map(|(yj, fj)| -0.5 * (LN_2PI + s2.ln()) - 0.5 * (yj - fj).powi(2) / s2)
        .sum();
    Ok(match *spec {
        LossSpec::Nll => -log_p,
        LossSpec::Beta { beta } => {
            -((beta - 1.0) * log_p).exp() / (beta - 1.0) + integral_i(beta, lik)? / beta
        }
        LossSpec::Gamma {
            gamma,
            normalization,
        } => {
            let exponent = match normalization {
                GammaNormalization::CrossEntropy => (gamma - 1.0) / gamma,
                GammaNormalization::InverseExponent => gamma / (gamma - 1.0),
            };
            -gamma / (gamma - 1.0)
                * ((gamma - 1.0) * log_p - exponent * log_integral_i(gamma, lik)?).exp()
        }
    })
}

/// Plain Monte-Carlo average of [`pointwise_loss`] over `f ~ q`.
///
/// # Panics
/// If `n_samples < 10_000`.
pub fn mc_loss_oracle(
    spec: &LossSpec,
    y: &[f64],
    q: &MarginalMoments<f64>,
    lik: &LikelihoodParams<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    assert!(n_samples >= 10_000, "oracle needs at least 1e4 samples");
    check(y, q, lik)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: Vec<f64> = q.var.iter().map(|v| v.sqrt()).collect();
    let mut f = vec![0.0; y.len()];
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for j in 0..f.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            f[j] = q.mean[j] + sd[j] * z;
        }
        values.push(pointwise_loss(spec, &f, y, lik)?);
    }
    let (estimate, std_error) = mean_and_se(&values);
    Ok(McEstimate {
        estimate,
        std_error,
    })
}

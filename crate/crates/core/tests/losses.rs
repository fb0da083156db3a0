mod common;

use common::{normal_pdf, rng, simpson};
use dgp_gvi::autodiff::{gradient, Var};
use dgp_gvi::loss::{
    expected_beta_loss, expected_gamma_loss, expected_loss, expected_nll, expected_power_density, integral_i,
    log_expected_power_density, log_neg_expected_gamma_loss, mc_loss_oracle, pointwise_loss, GammaNormalization,
    LikelihoodParams, LossSpec, MarginalMoments,
};
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TAU: f64 = std::f64::consts::TAU;

fn lik(s2: f64, d: usize) -> LikelihoodParams<f64> {
    LikelihoodParams::new(s2, d).unwrap()
}

fn mm(mean: &[f64], var: &[f64]) -> MarginalMoments<f64> {
    MarginalMoments::new(mean.to_vec(), var.to_vec()).unwrap()
}

struct Config {
    y: Vec<f64>,
    q: MarginalMoments<f64>,
    lik: LikelihoodParams<f64>,
}

fn random_config(d: usize, r: &mut ChaCha8Rng) -> Config {
    let mean: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..d).map(|_| r.random_range(0.05..1.0)).collect();
    let y: Vec<f64> = mean.iter().map(|m| m + r.random_range(-1.0..1.0)).collect();
    Config {
        y,
        q: mm(&mean, &var),
        lik: lik(r.random_range(0.2..1.5), d),
    }
}

fn quad_power(c: f64, s2: f64) -> f64 {
    let w = 40.0 * s2.sqrt();
    simpson(|y| normal_pdf(y, 0.0, s2).powf(c), -w, w, 20_000)
}

#[test]
fn integral_matches_quadrature() {
    let l = lik(1.0 / TAU, 1);
    let v = integral_i(2.0, &l).unwrap();
    assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((v - quad_power(2.0, 1.0 / TAU)).abs() < 1e-9);

    let v = integral_i(2.0, &lik(1.0, 1)).unwrap();
    assert!((v - quad_power(2.0, 1.0)).abs() < 1e-9);
    assert!((v - 0.28209).abs() < 1e-5);

    let mut r = rng(1);
    for _ in 0..20 {
        let c = r.random_range(0.3..4.0);
        let s2 = r.random_range(0.05..5.0);
        let v = integral_i(c, &lik(s2, 1)).unwrap();
        let q = quad_power(c, s2);
        assert!((v - q).abs() < 1e-8 * q.max(1.0), "c={c} s2={s2}: {v} vs {q}");
        // dimensions factorize
        let v3 = integral_i(c, &lik(s2, 3)).unwrap();
        assert!((v3 - q.powi(3)).abs() < 1e-8 * q.powi(3).max(1.0));
    }
}

#[test]
fn power_density_at_one_is_marginal_density() {
    let v = expected_power_density(1.0, &[0.0], &mm(&[0.0], &[1.0]), &lik(1.0, 1)).unwrap();
    assert!((v - 1.0 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
    let mut r = rng(2);
    for d in [1, 2, 5, 10] {
        for _ in 0..50 {
            let cfg = random_config(d, &mut r);
            let s2 = cfg.lik.noise_variance();
            let e1 = expected_power_density(1.0, &cfg.y, &cfg.q, &cfg.lik).unwrap();
            let direct: f64 = (0..d).map(|j| normal_pdf(cfg.y[j], cfg.q.mean[j], s2 + cfg.q.var[j])).product();
            assert!((e1 - direct).abs() / direct < 1e-8);
        }
    }
}

#[test]
fn power_density_point_mass_limit() {
    let v = expected_power_density(1.0, &[0.3], &mm(&[0.3], &[1e-12]), &lik(1.0, 1)).unwrap();
    assert!((v - 1.0 / TAU.sqrt()).abs() < 1e-10);
    let mut r = rng(3);
    for _ in 0..20 {
        let c = r.random_range(0.2..3.0);
        let (y, mu, s2) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(0.1..2.0));
        let v = expected_power_density(c, &[y], &mm(&[mu], &[1e-12]), &lik(s2, 1)).unwrap();
        let want = normal_pdf(y, mu, s2).powf(c) / c;
        assert!((v - want).abs() < 1e-9 * want.max(1e-300), "{v} vs {want}");
    }
}

#[test]
fn power_density_matches_quadrature_over_f() {
    let mut r = rng(4);
    for _ in 0..20 {
        let c = r.random_range(0.1..2.0);
        let (y, mu) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let (s2, v) = (r.random_range(0.1..2.0), r.random_range(0.05..2.0));
        let closed = expected_power_density(c, &[y], &mm(&[mu], &[v]), &lik(s2, 1)).unwrap();
        let w = 15.0 * v.sqrt();
        let quad = simpson(|f| normal_pdf(f, mu, v) * normal_pdf(y, f, s2).powf(c), mu - w, mu + w, 20_000) / c;
        assert!((closed - quad).abs() < 1e-9 * quad.max(1e-12), "{closed} vs {quad}");
    }
}

/// E(c) for a full covariance Σ, written in the precision form with
/// `Σ̃⁻¹ = (c/σ²)I + Σ⁻¹` and `η = (c/σ²)y + Σ⁻¹μ`.
fn power_density_full(c: f64, y: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>, s2: f64) -> f64 {
    let d = y.len();
    let cov_inv = cov.clone().try_inverse().unwrap();
    let tilde_inv = DMatrix::identity(d, d) * (c / s2) + &cov_inv;
    let tilde = tilde_inv.clone().try_inverse().unwrap();
    let eta = y * (c / s2) + &cov_inv * mu;
    let quad = c / s2 * y.dot(y) + mu.dot(&(&cov_inv * mu)) - eta.dot(&(&tilde * &eta));
    (TAU * s2).powf(-0.5 * d as f64 * c) * (tilde.determinant() / cov.determinant()).sqrt() * (-0.5 * quad).exp() / c
}

#[test]
fn full_covariance_form_reduces_to_diagonal() {
    let mut r = rng(5);
    for d in [1, 2, 4] {
        for _ in 0..10 {
            let cfg = random_config(d, &mut r);
            let c = r.random_range(0.2..2.5);
            let full = power_density_full(
                c,
                &DVector::from_column_slice(&cfg.y),
                &DVector::from_column_slice(&cfg.q.mean),
                &DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.q.var)),
                cfg.lik.noise_variance(),
            );
            let diag = expected_power_density(c, &cfg.y, &cfg.q, &cfg.lik).unwrap();
            assert!((full - diag).abs() < 1e-9 * diag, "{full} vs {diag}");
        }
    }
}

#[test]
fn full_covariance_form_matches_monte_carlo() {
    let mut r = rng(6);
    let d = 3;
    let w = DMatrix::from_fn(d, d, |_, _| r.random_range(-0.6..0.6));
    let cov = &w * w.transpose() + DMatrix::identity(d, d) * 0.1;
    let mu = DVector::from_fn(d, |_, _| r.random_range(-0.5..0.5));
    let y = DVector::from_fn(d, |i, _| mu[i] + 0.3);
    let (c, s2) = (0.5, 0.8);
    let closed = power_density_full(c, &y, &mu, &cov, s2);
    let l = cov.clone().cholesky().unwrap().l();
    let n = 100_000;
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
        let f = &mu + &l * z;
        let p: f64 = (0..d).map(|j| normal_pdf(y[j], f[j], s2)).product();
        vals.push(p.powf(c) / c);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    assert!((mean - closed).abs() < 3.0 * se, "{mean} ± {se} vs {closed}");
}

#[test]
fn nll_examples() {
    assert!(expected_nll(&[0.7], &mm(&[0.7], &[0.0]), &lik(1.0 / TAU, 1)).unwrap().abs() < 1e-15);
    let v = expected_nll(&[1.0], &mm(&[0.0], &[1.0]), &lik(1.0, 1)).unwrap();
    assert!((v - 1.91894).abs() < 1e-5);
}

#[test]
fn beta_examples() {
    let v = expected_beta_loss(2.0, &[0.0], &mm(&[0.0], &[1.0]), &lik(1.0, 1)).unwrap();
    let e1 = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    let i2 = quad_power(2.0, 1.0);
    assert!((v - (-e1 + i2 / 2.0)).abs() < 1e-9);
    let tail = expected_beta_loss(50.0, &[0.0], &mm(&[0.0], &[1.0]), &lik(1.0, 1)).unwrap();
    assert!(tail.abs() < 1e-8, "{tail}");
}

#[test]
fn gamma_point_mass_limit_is_pointwise_loss() {
    let mut r = rng(7);
    for _ in 0..20 {
        let cfg = random_config(2, &mut r);
        let g = r.random_range(1.01..3.0);
        let point = mm(&cfg.q.mean, &[1e-14, 1e-14]);
        let closed = expected_gamma_loss(g, GammaNormalization::CrossEntropy, &cfg.y, &point, &cfg.lik).unwrap();
        let direct = pointwise_loss(&LossSpec::gamma(g), &cfg.q.mean, &cfg.y, &cfg.lik).unwrap();
        assert!((closed - direct).abs() < 1e-9 * direct.abs(), "{closed} vs {direct}");
    }
}

#[test]
fn gamma_strictly_negative() {
    let mut r = rng(8);
    for i in 0..1000 {
        let cfg = random_config(1 + i % 5, &mut r);
        let g = r.random_range(1.001..4.0);
        for norm in [GammaNormalization::CrossEntropy, GammaNormalization::InverseExponent] {
            let v = expected_gamma_loss(g, norm, &cfg.y, &cfg.q, &cfg.lik).unwrap();
            assert!(v < 0.0, "{v}");
        }
    }
}

#[test]
fn gamma_log_domain_stays_finite() {
    let mut r = rng(9);
    for log_s2 in [-6.0, -3.0, 0.0, 3.0, 6.0] {
        let s2 = 10f64.powf(log_s2);
        for d in [1, 10, 30] {
            for g in [1.0001, 1.5, 3.0] {
                let mean: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
                let var: Vec<f64> = (0..d).map(|_| r.random_range(1e-8..10.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| r.random_range(-100.0..100.0)).collect();
                let l = lik(s2, d);
                let q = mm(&mean, &var);
                let lv = log_neg_expected_gamma_loss(g, GammaNormalization::CrossEntropy, &y, &q, &l).unwrap();
                assert!(lv.is_finite(), "s2={s2} d={d} g={g}: {lv}");
                let le = log_expected_power_density(g - 1.0, &y, &q, &l).unwrap();
                assert!(le.is_finite());
            }
        }
    }
}

#[test]
fn closed_forms_agree_with_monte_carlo() {
    let mut r = rng(10);
    let specs = [LossSpec::Nll, LossSpec::beta(1.5), LossSpec::gamma(1.05), LossSpec::gamma(1.5)];
    for d in [1, 2, 5] {
        for k in 0..4 {
            let cfg = random_config(d, &mut r);
            for spec in &specs {
                let closed = expected_loss(spec, &cfg.y, &cfg.q, &cfg.lik).unwrap();
                let est = mc_loss_oracle(spec, &cfg.y, &cfg.q, &cfg.lik, 20_000, 100 * d as u64 + k).unwrap();
                assert!(est.z_score(closed) < 3.5, "{spec:?} d={d}: {est:?} vs {closed}");
            }
        }
    }
}

#[test]
fn oracle_is_deterministic() {
    let cfg = random_config(2, &mut rng(11));
    let a = mc_loss_oracle(&LossSpec::beta(1.5), &cfg.y, &cfg.q, &cfg.lik, 10_000, 5).unwrap();
    let b = mc_loss_oracle(&LossSpec::beta(1.5), &cfg.y, &cfg.q, &cfg.lik, 10_000, 5).unwrap();
    assert_eq!(a, b);
}

/// Expected loss as a function of (μ, s², σ², y) packed as `[μ.., s².., σ², y..]`.
fn loss_of(spec: LossSpec, d: usize) -> impl Fn(&[Var]) -> Var {
    move |p: &[Var]| {
        let mean = p[..d].to_vec();
        let var = p[d..2 * d].to_vec();
        let lik = LikelihoodParams {
            log_noise_variance: p[2 * d].ln(),
            output_dim: d,
        };
        let y = &p[2 * d + 1..];
        expected_loss(&spec, y, &MarginalMoments::new(mean, var).unwrap(), &lik).unwrap()
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(12);
    let specs = [LossSpec::Nll, LossSpec::beta(1.05), LossSpec::beta(2.0), LossSpec::gamma(1.05), LossSpec::gamma(1.5)];
    for d in [1, 3] {
        for spec in specs {
            let cfg = random_config(d, &mut r);
            let mut x: Vec<f64> = cfg.q.mean.clone();
            x.extend(&cfg.q.var);
            x.push(cfg.lik.noise_variance());
            x.extend(&cfg.y);
            let f = loss_of(spec, d);
            let (_, g) = gradient(&f, &x);
            for i in 0..x.len() {
                let h = 1e-5 * x[i].abs().max(1.0);
                let eval = |delta: f64| {
                    let mut p: Vec<Var> = x.iter().map(|&v| Var::constant(v)).collect();
                    p[i] = Var::constant(x[i] + delta);
                    f(&p).value()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "{spec:?} d={d} param {i}: {} vs {fd}", g[i]);
            }
        }
    }
}

proptest! {
    #[test]
    fn beta_loss_decomposes(mu in -2.0f64..2.0, v in 0.01f64..2.0, y in -3.0f64..3.0, s2 in 0.1f64..3.0, beta in 1.01f64..4.0) {
        let l = lik(s2, 1);
        let q = mm(&[mu], &[v]);
        let b = expected_beta_loss(beta, &[y], &q, &l).unwrap();
        let e = expected_power_density(beta - 1.0, &[y], &q, &l).unwrap();
        let i = integral_i(beta, &l).unwrap();
        prop_assert!((b - (i / beta - e)).abs() < 1e-12 * (1.0 + b.abs()));
    }

    #[test]
    fn nll_minimized_at_observation(mu in -2.0f64..2.0, v in 0.01f64..2.0, s2 in 0.1f64..3.0, shift in 0.01f64..2.0) {
        let l = lik(s2, 1);
        let at = expected_nll(&[mu], &mm(&[mu], &[v]), &l).unwrap();
        let off = expected_nll(&[mu + shift], &mm(&[mu], &[v]), &l).unwrap();
        prop_assert!(off > at);
    }
}

mod common;

use common::{normal_pdf, random_spd, random_vec, rng, simpson, to_na};
use dgp_gvi::divergence::{
    apply_quantifier, kld_gauss, mc_divergence_oracle, renyi_alpha_gauss, GaussianDist, QuantifierSpec,
};
use dgp_gvi::linalg::Mat;
use dgp_gvi::GviError;
use proptest::prelude::*;
use rand::Rng;

fn gauss1(mean: f64, var: f64) -> GaussianDist<f64> {
    GaussianDist::from_covariance(vec![mean], Mat::diag(&[var])).unwrap()
}

fn random_pair(d: usize, seed: u64) -> (GaussianDist<f64>, GaussianDist<f64>) {
    let mut r = rng(seed);
    let q = GaussianDist::from_covariance(random_vec(d, 1.0, &mut r), random_spd(d, 0.5, &mut r)).unwrap();
    let p = GaussianDist::from_covariance(random_vec(d, 1.0, &mut r), random_spd(d, 0.5, &mut r)).unwrap();
    (q, p)
}

/// Rényi divergence of two 1-D normals by quadrature of ∫ q^α p^{1−α}.
fn renyi_quadrature(mq: f64, vq: f64, mp: f64, vp: f64, alpha: f64) -> f64 {
    let lo = mq.min(mp) - 12.0 * vq.max(vp).sqrt();
    let hi = mq.max(mp) + 12.0 * vq.max(vp).sqrt();
    let integral = simpson(|x| normal_pdf(x, mq, vq).powf(alpha) * normal_pdf(x, mp, vp).powf(1.0 - alpha), lo, hi, 20_000);
    integral.ln() / (alpha * (alpha - 1.0))
}

/// The precision-weighted form of the closed expression, written with dense inverses.
fn renyi_precision_form(q: &GaussianDist<f64>, p: &GaussianDist<f64>, alpha: f64) -> f64 {
    let sq = to_na(&q.cov.reconstruct());
    let sp = to_na(&p.cov.reconstruct());
    let mq = common::col(&q.mean);
    let mp = common::col(&p.mean);
    let iq = sq.clone().try_inverse().unwrap();
    let ip = sp.clone().try_inverse().unwrap();
    let lambda = &iq * alpha + &ip * (1.0 - alpha);
    let b = &iq * &mq * alpha + &ip * &mp * (1.0 - alpha);
    let star = lambda.clone().try_inverse().unwrap();
    let tq = mq.dot(&(&iq * &mq)) + sq.determinant().ln();
    let tp = mp.dot(&(&ip * &mp)) + sp.determinant().ln();
    let ts = b.dot(&(&star * &b)) + star.determinant().ln();
    (alpha * tq + (1.0 - alpha) * tp - ts) / (2.0 * alpha * (1.0 - alpha))
}

#[test]
fn kld_examples() {
    let q = gauss1(0.0, 1.0);
    assert!(kld_gauss(&q, &q).unwrap().abs() < 1e-15);
    assert!((kld_gauss(&q, &gauss1(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-14);
}

#[test]
fn kld_matches_quadrature() {
    let value = kld_gauss(&gauss1(0.0, 4.0), &gauss1(0.0, 1.0)).unwrap();
    let quad = simpson(
        |x| {
            // log q − log p written out to avoid 0/0 in the tails
            let log_ratio = -0.5 * 4f64.ln() - x * x / 8.0 + x * x / 2.0;
            normal_pdf(x, 0.0, 4.0) * log_ratio
        },
        -40.0,
        40.0,
        40_000,
    );
    assert!((value - quad).abs() < 1e-6, "{value} vs {quad}");
}

#[test]
fn renyi_half_on_unit_shift() {
    let v = renyi_alpha_gauss(&gauss1(0.0, 1.0), &gauss1(1.0, 1.0), 0.5).unwrap();
    assert!((v - 0.5).abs() < 1e-14);
    let quad = renyi_quadrature(0.0, 1.0, 1.0, 1.0, 0.5);
    assert!((quad - 0.5).abs() < 1e-8);
}

#[test]
fn renyi_matches_quadrature_on_random_pairs() {
    let mut r = rng(21);
    for _ in 0..50 {
        let (mq, mp) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let (vq, vp) = (r.random_range(0.2..3.0), r.random_range(0.2..3.0));
        for alpha in [0.25, 0.5, 0.75] {
            let closed = renyi_alpha_gauss(&gauss1(mq, vq), &gauss1(mp, vp), alpha).unwrap();
            let quad = renyi_quadrature(mq, vq, mp, vp, alpha);
            assert!((closed - quad).abs() < 1e-6, "alpha {alpha}: {closed} vs {quad}");
        }
    }
}

#[test]
fn renyi_matches_precision_form() {
    for seed in 0..20 {
        let (q, p) = random_pair(1 + (seed as usize % 5), seed);
        for alpha in [0.1, 0.5, 0.9] {
            let a = renyi_alpha_gauss(&q, &p, alpha).unwrap();
            let b = renyi_precision_form(&q, &p, alpha);
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn renyi_tends_to_kld() {
    for seed in 0..10 {
        let (q, p) = random_pair(3, 100 + seed);
        let kld = kld_gauss(&q, &p).unwrap();
        let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|eps| (renyi_alpha_gauss(&q, &p, 1.0 - eps).unwrap() - kld).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-2 * (1.0 + kld));
        // first order in ε: the gap shrinks about tenfold per decade
        assert!(gaps[2] / gaps[1] < 0.2, "{gaps:?}");
    }
    let (q, p) = random_pair(3, 7);
    let near = renyi_alpha_gauss(&q, &p, 0.999).unwrap();
    let kld = kld_gauss(&q, &p).unwrap();
    assert!((near - kld).abs() < 1e-2, "{near} vs {kld}");
}

#[test]
fn alpha_outside_unit_interval_rejected() {
    let q = gauss1(0.0, 1.0);
    for alpha in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
        assert!(matches!(renyi_alpha_gauss(&q, &q, alpha), Err(GviError::AlphaOutOfRange(_))));
    }
    assert!(QuantifierSpec::ScaledKld { w: 0.0 }.validate().is_err());
}

#[test]
fn dimension_mismatch_rejected() {
    let (q, _) = random_pair(2, 0);
    let (_, p) = random_pair(3, 0);
    assert!(matches!(kld_gauss(&q, &p), Err(GviError::DimensionMismatch { .. })));
    assert!(renyi_alpha_gauss(&q, &p, 0.5).is_err());
}

#[test]
fn quantifier_dispatch() {
    let (q, p) = (gauss1(0.0, 1.0), gauss1(1.0, 1.0));
    assert!((apply_quantifier(&QuantifierSpec::ScaledKld { w: 2.0 }, &q, &p).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(apply_quantifier(&QuantifierSpec::Kld, &q, &p).unwrap(), kld_gauss(&q, &p).unwrap());
    assert_eq!(
        apply_quantifier(&QuantifierSpec::Renyi { alpha: 0.5 }, &q, &p).unwrap(),
        renyi_alpha_gauss(&q, &p, 0.5).unwrap()
    );
}

#[test]
fn monte_carlo_oracle_agrees() {
    let q = gauss1(0.0, 1.0);
    for spec in [QuantifierSpec::Kld, QuantifierSpec::Renyi { alpha: 0.5 }] {
        let same = mc_divergence_oracle(&q, &q, &spec, 10_000, 1);
        assert!(same.z_score(0.0) < 3.0, "{same:?}");
    }
    let est = mc_divergence_oracle(&q, &gauss1(1.0, 1.0), &QuantifierSpec::Kld, 100_000, 2);
    assert!(est.z_score(0.5) < 3.0, "{est:?}");
    let (q2, p2) = random_pair(2, 5);
    let spec = QuantifierSpec::Renyi { alpha: 0.5 };
    let est = mc_divergence_oracle(&q2, &p2, &spec, 100_000, 3);
    let closed = renyi_alpha_gauss(&q2, &p2, 0.5).unwrap();
    assert!(est.z_score(closed) < 3.0, "{est:?} vs {closed}");
    let scaled = mc_divergence_oracle(&q2, &p2, &QuantifierSpec::ScaledKld { w: 4.0 }, 100_000, 3);
    let closed = kld_gauss(&q2, &p2).unwrap() / 4.0;
    assert!(scaled.z_score(closed) < 3.0, "{scaled:?} vs {closed}");
}

#[test]
fn oracle_is_deterministic() {
    let (q, p) = random_pair(2, 9);
    let a = mc_divergence_oracle(&q, &p, &QuantifierSpec::Kld, 10_000, 4);
    let b = mc_divergence_oracle(&q, &p, &QuantifierSpec::Kld, 10_000, 4);
    assert_eq!(a, b);
}

#[test]
#[should_panic(expected = "1e4")]
fn oracle_needs_enough_samples() {
    let q = gauss1(0.0, 1.0);
    mc_divergence_oracle(&q, &q, &QuantifierSpec::Kld, 100, 0);
}

#[test]
fn nonnegative_on_many_random_pairs() {
    for seed in 0..1000u64 {
        let d = 1 + (seed % 10) as usize;
        let (q, p) = random_pair(d, 5000 + seed);
        for spec in [QuantifierSpec::Kld, QuantifierSpec::ScaledKld { w: 3.0 }, QuantifierSpec::Renyi { alpha: 0.3 }] {
            let v = apply_quantifier(&spec, &q, &p).unwrap();
            assert!(v >= -1e-10, "seed {seed} {spec:?}: {v}");
        }
    }
}

proptest! {
    #[test]
    fn zero_at_equality(seed in 0u64..10_000, d in 1usize..8, alpha in 0.01f64..0.99) {
        let (q, _) = random_pair(d, seed);
        prop_assert!(kld_gauss(&q, &q).unwrap().abs() < 1e-10);
        prop_assert!(renyi_alpha_gauss(&q, &q, alpha).unwrap().abs() < 1e-10);
    }

    #[test]
    fn renyi_is_nondecreasing_in_alpha(seed in 0u64..10_000, d in 1usize..5) {
        let (q, p) = random_pair(d, seed);
        let a = renyi_alpha_gauss(&q, &p, 0.3).unwrap();
        let b = renyi_alpha_gauss(&q, &p, 0.6).unwrap();
        // α·D is the usual order-α Rényi divergence, nondecreasing in α
        prop_assert!(0.6 * b >= 0.3 * a - 1e-10);
    }
}

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use stsfa::frontier::{
    loglik_time_invariant, loglik_time_varying, posterior_moments_tv, residuals,
    technical_efficiency_tv,
};
use stsfa::{DecayProfile, FrontierSign, PanelDataset, ParamVector, TeMode, VarianceParams};

/// Joint density of one unit's residuals given inefficiency `w`, times the
/// half-normal density of `w` with variance `σ²_ũ/δ²`.
fn integrand(eps: &[f64], k: &[f64], w: f64, sv2: f64, su2: f64, delta: f64, s: f64) -> f64 {
    let b = su2 / (delta * delta);
    let mut ln = std::f64::consts::LN_2 - 0.5 * (LN_2PI + b.ln()) - 0.5 * w * w / b;
    for (e, kt) in eps.iter().zip(k) {
        let z = e + s * kt * w;
        ln += -0.5 * (LN_2PI + sv2.ln()) - 0.5 * z * z / sv2;
    }
    ln.exp()
}

fn upper_limit(sv2: f64, su2: f64, delta: f64, eps: &[f64]) -> f64 {
    let scale = (su2 / (delta * delta)).sqrt() + sv2.sqrt();
    let spread = eps.iter().map(|e| e.abs()).fold(0.0, f64::max);
    12.0 * scale + 4.0 * spread
}

/// Adaptive Simpson over 64 fixed panels of `[0, hi]`, so narrow peaks are
/// never skipped by the first coarse estimate. The tolerance is relative to
/// the integrand's peak, which can be far below one.
fn integrate<F: Fn(f64) -> f64>(f: &F, hi: f64) -> f64 {
    let h = hi / 64.0;
    let peak = (0..=4096)
        .map(|j| f(j as f64 * hi / 4096.0))
        .fold(0.0, f64::max);
    let tol = 1e-14 * peak * h;
    (0..64)
        .map(|j| simpson(f, j as f64 * h, (j + 1) as f64 * h, tol))
        .sum()
}

fn one_unit(eps: &[f64]) -> PanelDataset {
    let t = eps.len();
    PanelDataset::new(
        vec!["a".into()],
        (1..=t).map(|k| k.to_string()).collect(),
        "y",
        vec!["zero".into()],
        eps.to_vec(),
        vec![0.0; t],
    )
    .unwrap()
}

#[test]
fn time_varying_loglik_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..40 {
        let t = rng.random_range(1..=6);
        let eps: Vec<f64> = (0..t).map(|_| 0.8 * normal(&mut rng)).collect();
        let sv2 = rng.random_range(0.1..1.5);
        let su2 = rng.random_range(0.1..2.0);
        let eta = rng.random_range(-0.3..0.3);
        let delta = rng.random_range(0.4..1.6);
        let sign = if rng.random::<bool>() {
            FrontierSign::Production
        } else {
            FrontierSign::Cost
        };
        let k = DecayProfile::new(eta, t);
        let params = ParamVector {
            beta: vec![0.0],
            sigma2_v: sv2,
            sigma2_u: su2,
            rho: None,
            eta: Some(eta),
        };
        let got = loglik_time_varying(&params, &one_unit(&eps), &[delta], sign).unwrap();
        let f = |w: f64| integrand(&eps, k.values(), w, sv2, su2, delta, sign.value());
        let oracle = integrate(&f, upper_limit(sv2, su2, delta, &eps)).ln();
        assert!((got - oracle).abs() < 1e-8, "T={t}: {got} vs {oracle}");
    }
}

#[test]
fn time_invariant_is_the_zero_decay_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let data = random_panel(&mut rng, 25, 4, 3);
    let w = random_weights(&mut rng, 25);
    for _ in 0..20 {
        let mut p = random_params(&mut rng, 3, Some(w.rho_bounds()), Some(0.0));
        let delta = w.delta(p.rho.unwrap()).unwrap();
        let ti = loglik_time_invariant(&p, &data, &delta, FrontierSign::Production).unwrap();
        let tv = loglik_time_varying(&p, &data, &delta, FrontierSign::Production).unwrap();
        assert!((ti - tv).abs() < 1e-10);
        p.eta = None;
        assert_eq!(
            loglik_time_varying(&p, &data, &delta, FrontierSign::Production).unwrap(),
            tv
        );
    }
}

#[test]
fn cross_section_matches_closed_form_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let e = 2.0 * normal(&mut rng);
        let sv2 = rng.random_range(0.05..2.0);
        let su2 = rng.random_range(0.05..2.0);
        let s = if rng.random::<bool>() {
            FrontierSign::Production
        } else {
            FrontierSign::Cost
        };
        let params = ParamVector {
            beta: vec![0.0],
            sigma2_v: sv2,
            sigma2_u: su2,
            rho: None,
            eta: None,
        };
        let got = loglik_time_invariant(&params, &one_unit(&[e]), &[1.0], s).unwrap();
        let want = als_log_density(e, sv2, su2, s.value());
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn bc92_efficiency_matches_quadrature_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..25 {
        let t = rng.random_range(2..=5);
        let eps: Vec<f64> = (0..t).map(|_| 0.7 * normal(&mut rng)).collect();
        let sv2 = rng.random_range(0.1..1.0);
        let su2 = rng.random_range(0.1..1.5);
        let eta = rng.random_range(-0.2..0.2);
        let delta = rng.random_range(0.5..1.5);
        let k = DecayProfile::new(eta, t);
        let vp = VarianceParams::new(sv2, su2).unwrap();
        let pm = posterior_moments_tv(&eps, &k, &[delta], vp, FrontierSign::Production).unwrap();
        let te = technical_efficiency_tv(&pm, &k, TeMode::Bc92);
        let paper = technical_efficiency_tv(&pm, &k, TeMode::Paper);

        let hi = upper_limit(sv2, su2, delta, &eps);
        let f = |w: f64| integrand(&eps, k.values(), w, sv2, su2, delta, 1.0);
        let mass = integrate(&f, hi);
        for (tt, &kt) in k.values().iter().enumerate() {
            let g = |w: f64| (-kt * w).exp() * f(w);
            let want = integrate(&g, hi) / mass;
            assert!((te[tt] - want).abs() < 1e-7, "t={tt}: {} vs {want}", te[tt]);
        }
        let g = |w: f64| (-w).exp() * f(w);
        let want = integrate(&g, hi) / mass;
        assert!(paper.iter().all(|&v| (v - want).abs() < 1e-7));

        let (mean, sd) = posterior_by_completing_square(&eps, k.values(), delta, sv2, su2, 1.0);
        assert!((pm.mu_star[0] - mean).abs() < 1e-12);
        assert!((pm.sigma2_star[0].sqrt() - sd).abs() < 1e-12);
    }
}

#[test]
fn two_period_posterior_mean_by_hand() {
    let eta: f64 = 0.1;
    let k = DecayProfile::new(eta, 2);
    assert!((k.values()[0] - 0.1f64.exp()).abs() < 1e-15);
    assert_eq!(k.values()[1], 1.0);
    let vp = VarianceParams::new(1.0, 1.0).unwrap();
    let pm = posterior_moments_tv(&[0.1, 0.3], &k, &[1.0], vp, FrontierSign::Production).unwrap();
    let e1 = 0.1f64.exp();
    let want = -(0.1 * e1 + 0.3) / (2.0 + 0.2f64.exp());
    assert!((pm.mu_star[0] - want).abs() < 1e-14);
}

#[test]
fn residuals_are_row_major() {
    let data = PanelDataset::new(
        vec!["a".into(), "b".into()],
        vec!["1".into(), "2".into()],
        "y",
        vec!["c".into(), "x".into()],
        vec![1.0, 2.0, 3.0, 4.0],
        vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0],
    )
    .unwrap();
    assert_eq!(
        residuals(&data, &[1.0, 1.0]).unwrap(),
        vec![0.0, 0.0, 0.0, 0.0]
    );
    assert!(residuals(&data, &[1.0]).is_err());
}

#[test]
fn efficiency_by_monte_carlo_posterior_draws() {
    let eps = [-0.4, 0.1, -0.7];
    let k = DecayProfile::new(0.05, 3);
    let vp = VarianceParams::new(0.3, 0.8).unwrap();
    let delta = 0.8;
    let pm = posterior_moments_tv(&eps, &k, &[delta], vp, FrontierSign::Production).unwrap();
    let te = technical_efficiency_tv(&pm, &k, TeMode::Bc92);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let draws = 200_000;
    let sd = pm.sigma2_star[0].sqrt();
    let mut sums = [0.0; 3];
    for _ in 0..draws {
        let w = truncated_normal(&mut rng, pm.mu_star[0], sd);
        for (s, kt) in sums.iter_mut().zip(k.values()) {
            *s += (-kt * w).exp();
        }
    }
    for (s, want) in sums.iter().zip(&te) {
        assert!((s / draws as f64 - want).abs() < 3e-3);
    }
}

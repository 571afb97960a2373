mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use stsfa::estimator::{fit, init, Convergence, FitOptions, Marker, StdError};
use stsfa::montecarlo::{simulate_dgp, DgpConfig};
use stsfa::panel::INTERCEPT;
use stsfa::{PanelDataset, StsfaError, TeMode};

/// Draws from the model's own likelihood: `y = Xβ + v_it − s·k_t·ũ_i/δ_i`.
#[allow(clippy::too_many_arguments)]
fn model_panel(
    rng: &mut ChaCha8Rng,
    n: usize,
    t: usize,
    beta: [f64; 2],
    sv2: f64,
    su2: f64,
    eta: f64,
    delta: &[f64],
) -> PanelDataset {
    let tt = t as f64;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for d in &delta[..n] {
        let u = (su2.sqrt() * normal(rng)).abs() / d;
        for k in 1..=t {
            let xi = rng.random_range(0.0..2.0);
            let decay = (-eta * (k as f64 - tt)).exp();
            x.extend([1.0, xi]);
            y.push(beta[0] + beta[1] * xi + sv2.sqrt() * normal(rng) - decay * u);
        }
    }
    PanelDataset::new(
        (0..n).map(|i| format!("f{i}")).collect(),
        (1..=t).map(|k| format!("{}", 2000 + k)).collect(),
        "y",
        vec![INTERCEPT.into(), "x".into()],
        y,
        x,
    )
    .unwrap()
}

fn se(fit: &stsfa::FitResult, k: usize) -> f64 {
    fit.std_errors[k].value().unwrap()
}

#[test]
fn recovers_parameters_on_correctly_specified_spatial_panel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 600;
    // unstandardized group weights: row sums vary with group size, so ρ is identified
    let w = uneven_group_weights(n);
    assert!(!w.has_uniform_delta());
    let rho = 0.5 * w.rho_bounds().1;
    let delta = w.delta(rho).unwrap();
    let data = model_panel(&mut rng, n, 5, [1.0, 0.5], 0.1, 0.6, 0.05, &delta);
    let f = fit(
        &"stsfa-tv".parse().unwrap(),
        &data,
        Some(&w),
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(f.convergence, Convergence::Converged, "{:?}", f.warnings);
    assert!(f.rho_identified);
    let truth = [1.0, 0.5, 0.1, 0.6, rho, 0.05];
    for (k, (est, tv)) in f.params.to_natural_vec().iter().zip(truth).enumerate() {
        let s = se(&f, k);
        assert!(
            (est - tv).abs() <= 4.0 * s,
            "{}: {est} vs {tv} (se {s})",
            f.labels[k]
        );
    }
    assert!(f.loglik >= f.init_loglik);
}

#[test]
fn gaussian_limit_standard_errors_match_ols() {
    // right-skewed noise contradicts a production frontier, so σ²_u goes to its bound
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..3.0);
        let e: f64 = normal(&mut rng);
        x.extend([1.0, xi]);
        y.push(2.0 + 0.7 * xi + 0.5 * (e + 0.4 * (e * e - 1.0)));
    }
    let data = PanelDataset::new(
        (0..n).map(|i| i.to_string()).collect(),
        vec!["1".into()],
        "y",
        vec![INTERCEPT.into(), "x".into()],
        y,
        x,
    )
    .unwrap();
    let f = fit(&"sfa".parse().unwrap(), &data, None, &FitOptions::default()).unwrap();
    assert_eq!(f.convergence, Convergence::Boundary);
    assert_eq!(f.std_errors[3], StdError::Marker(Marker::Boundary));
    assert!(f.efficiency.iter().flatten().all(|&te| te > 0.99));

    let ols = init::pooled_ols(&data).unwrap();
    let sigma2 = ols.residuals.iter().map(|e| e * e).sum::<f64>() / n as f64;
    for j in 0..2 {
        let closed = (sigma2 * ols.xtx_inv[(j, j)]).sqrt();
        let got = se(&f, j);
        assert!(
            (got / closed - 1.0).abs() < 0.01,
            "beta{j}: {got} vs {closed}"
        );
    }
}

#[test]
fn scale_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = model_panel(&mut rng, 150, 4, [1.0, 0.5], 0.1, 0.4, 0.08, &[1.0; 150]);
    let spec = "tsfa-tv".parse().unwrap();
    let a = fit(&spec, &data, None, &FitOptions::default()).unwrap();
    let c = 7.5;
    let b = fit(
        &spec,
        &data.scale_column(1, c),
        None,
        &FitOptions::default(),
    )
    .unwrap();
    assert!(
        (a.loglik - b.loglik).abs() <= 1e-6,
        "{} vs {}",
        a.loglik,
        b.loglik
    );
    assert!((a.params.beta[1] / c - b.params.beta[1]).abs() <= 1e-4 * a.params.beta[1].abs());
    assert!((a.params.beta[0] - b.params.beta[0]).abs() <= 1e-4);
    for (x, y) in [
        (a.params.sigma2_v, b.params.sigma2_v),
        (a.params.sigma2_u, b.params.sigma2_u),
        (a.params.eta.unwrap(), b.params.eta.unwrap()),
    ] {
        assert!((x - y).abs() <= 1e-3 * x.abs().max(0.01), "{x} vs {y}");
    }
}

#[test]
fn fits_are_bitwise_deterministic() {
    let sim = simulate_dgp(&DgpConfig {
        n: 80,
        rho: 0.4,
        eta: 0.05,
        seed: 5,
        ..DgpConfig::default()
    })
    .unwrap();
    let w = uneven_group_weights(80);
    let spec = "stsfa-tv".parse().unwrap();
    let a = fit(&spec, &sim.data, Some(&w), &FitOptions::default()).unwrap();
    let b = fit(&spec, &sim.data, Some(&w), &FitOptions::default()).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn efficiency_shapes_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = model_panel(&mut rng, 120, 5, [1.0, 0.5], 0.05, 0.5, 0.1, &[1.0; 120]);
    let ti = fit(
        &"tsfa-ti".parse().unwrap(),
        &data,
        None,
        &FitOptions::default(),
    )
    .unwrap();
    for row in &ti.efficiency {
        assert!(row.iter().all(|&te| te == row[0] && te > 0.0 && te <= 1.0));
    }
    let mut spec: stsfa::ModelSpec = "tsfa-tv".parse().unwrap();
    let tv = fit(&spec, &data, None, &FitOptions::default()).unwrap();
    assert!(tv.params.eta.unwrap() > 0.0);
    for row in &tv.efficiency {
        assert!(row.windows(2).all(|p| p[1] >= p[0]), "{row:?}");
    }
    spec.te_mode = TeMode::Paper;
    let paper = fit(&spec, &data, None, &FitOptions::default()).unwrap();
    for row in &paper.efficiency {
        assert!(row.iter().all(|&te| te == row[0]));
    }
    let again = stsfa::estimator::efficiency_scores(&tv, &data, None).unwrap();
    assert_eq!(again, tv.efficiency);
}

#[test]
fn pooled_cross_section_keeps_the_panel_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = model_panel(&mut rng, 60, 3, [1.0, 0.5], 0.1, 0.4, 0.0, &[1.0; 60]);
    assert!(matches!(
        fit(&"sfa".parse().unwrap(), &data, None, &FitOptions::default()),
        Err(StsfaError::Invalid(_))
    ));
    let mut spec: stsfa::ModelSpec = "ssfa".parse().unwrap();
    spec.pooled = true;
    let w = uneven_group_weights(60);
    let f = fit(&spec, &data, Some(&w), &FitOptions::default()).unwrap();
    assert_eq!(f.efficiency.len(), 60);
    assert!(f.efficiency.iter().all(|r| r.len() == 3));
    assert_eq!(f.unit_ids.len(), 60);
}

#[test]
fn input_contract_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = model_panel(&mut rng, 20, 1, [1.0, 0.5], 0.1, 0.4, 0.0, &[1.0; 20]);
    assert!(matches!(
        fit(
            &"tsfa-tv".parse().unwrap(),
            &data,
            None,
            &FitOptions::default()
        ),
        Err(StsfaError::Invalid(_))
    ));
    assert!(matches!(
        fit(
            &"stsfa-ti".parse().unwrap(),
            &data,
            None,
            &FitOptions::default()
        ),
        Err(StsfaError::Invalid(_))
    ));
    let w = uneven_group_weights(21);
    assert!(matches!(
        fit(
            &"stsfa-ti".parse().unwrap(),
            &data,
            Some(&w),
            &FitOptions::default()
        ),
        Err(StsfaError::Misaligned(_))
    ));
    let wrong_ids = uneven_group_weights(20)
        .with_unit_ids((0..20).map(|i| format!("z{i}")).collect())
        .unwrap();
    assert!(matches!(
        fit(
            &"ssfa".parse().unwrap(),
            &data,
            Some(&wrong_ids),
            &FitOptions::default()
        ),
        Err(StsfaError::Misaligned(_))
    ));
}

#[test]
fn uniform_row_sums_pin_rho() {
    let sim = simulate_dgp(&DgpConfig {
        n: 100,
        rho: 0.4,
        eta: 0.05,
        seed: 9,
        ..DgpConfig::default()
    })
    .unwrap();
    let f = fit(
        &"stsfa-tv".parse().unwrap(),
        &sim.data,
        Some(&sim.weights),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(!f.rho_identified);
    assert_eq!(f.std_errors[4], StdError::Marker(Marker::Fixed));
    let plain = fit(
        &"tsfa-tv".parse().unwrap(),
        &sim.data,
        None,
        &FitOptions::default(),
    )
    .unwrap();
    assert!((f.loglik - plain.loglik).abs() < 1e-6);
    // the identified combination matches the non-spatial variance
    assert!((f.sigma2_u_total - plain.params.sigma2_u).abs() < 1e-4 * plain.params.sigma2_u);
}

#[test]
fn moran_start_tracks_true_rho_on_simulated_design() {
    let cfg = DgpConfig {
        n: 400,
        rho: 0.4,
        eta: 0.05,
        seed: 10,
        ..DgpConfig::default()
    };
    let sim = simulate_dgp(&cfg).unwrap();
    let spec = "stsfa-tv".parse().unwrap();
    let start = init::initialize(&spec, &sim.data, Some(&sim.weights)).unwrap();
    let rho0 = start.params.rho.unwrap();
    assert!((rho0 - cfg.rho).abs() <= 0.3, "rho0 = {rho0}");
}

#[test]
fn standard_errors_match_monte_carlo_spread() {
    let reps = 120;
    let mut est = Vec::new();
    let mut ses = Vec::new();
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
        let data = model_panel(&mut rng, 200, 5, [1.0, 0.5], 0.1, 0.5, 0.05, &[1.0; 200]);
        let f = fit(
            &"tsfa-tv".parse().unwrap(),
            &data,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        est.push(f.params.beta[1]);
        ses.push(se(&f, 1));
    }
    let mean = est.iter().sum::<f64>() / reps as f64;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let mean_se = ses.iter().sum::<f64>() / reps as f64;
    assert!(
        (mean_se / sd - 1.0).abs() <= 0.25,
        "mean se {mean_se} vs mc sd {sd}"
    );
}

#[test]
fn singular_design_names_the_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = model_panel(&mut rng, 30, 2, [1.0, 0.5], 0.1, 0.4, 0.0, &[1.0; 30]);
    let x: Vec<f64> = base
        .x()
        .chunks(2)
        .flat_map(|r| [r[0], r[1], 3.0 * r[1]])
        .collect();
    let data = PanelDataset::new(
        base.unit_ids().to_vec(),
        base.time_ids().to_vec(),
        "y",
        vec![INTERCEPT.into(), "x".into(), "x3".into()],
        base.y().to_vec(),
        x,
    )
    .unwrap();
    match fit(
        &"tsfa-ti".parse().unwrap(),
        &data,
        None,
        &FitOptions::default(),
    ) {
        Err(StsfaError::Singular { columns }) => assert_eq!(columns, vec!["x3".to_string()]),
        other => panic!("{:?}", other.map(|f| f.params)),
    }
}

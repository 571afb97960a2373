#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use stsfa::panel::INTERCEPT;
use stsfa::{PanelDataset, ParamVector, SpatialWeights};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Panel with an intercept and `p − 1` standard-normal regressors.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, p: usize) -> PanelDataset {
    let mut x = Vec::with_capacity(n * t * p);
    let mut y = Vec::with_capacity(n * t);
    for _ in 0..n * t {
        x.push(1.0);
        for _ in 1..p {
            x.push(normal(rng));
        }
        y.push(1.0 + 0.5 * normal(rng));
    }
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((1..p).map(|k| format!("x{k}")));
    PanelDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        (1..=t).map(|k| k.to_string()).collect(),
        "y",
        names,
        y,
        x,
    )
    .unwrap()
}

/// Sparse non-negative weights with unequal row sums (no standardization).
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> SpatialWeights {
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < 3.0 / n as f64 {
                entries.push((i, j, rng.random_range(0.1..1.0)));
            }
        }
    }
    SpatialWeights::from_triplets(n, entries).unwrap()
}

/// Group-contiguity weights over groups of sizes 1, 2, ..., cycling, which
/// gives unequal row sums.
pub fn uneven_group_weights(n: usize) -> SpatialWeights {
    let mut labels = Vec::with_capacity(n);
    let mut g = 0;
    let mut size = 2;
    while labels.len() < n {
        for _ in 0..size {
            if labels.len() < n {
                labels.push(format!("g{g}"));
            }
        }
        g += 1;
        size = 2 + (size - 1) % 5;
    }
    stsfa::weights::group_contiguity_weights(&labels).unwrap().0
}

pub fn random_params(
    rng: &mut ChaCha8Rng,
    p: usize,
    rho_bounds: Option<(f64, f64)>,
    eta: Option<f64>,
) -> ParamVector {
    ParamVector {
        beta: (0..p).map(|_| normal(rng)).collect(),
        sigma2_v: rng.random_range(0.05..1.5),
        sigma2_u: rng.random_range(0.05..2.0),
        rho: rho_bounds.map(|(lo, hi)| rng.random_range(0.9 * lo..0.9 * hi)),
        eta,
    }
}

/// `ln Φ(x)` straight from the complementary error function.
pub fn ln_phi_cdf(x: f64) -> f64 {
    (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Normal/half-normal composed-error log-density in the `(σ, λ)`
/// parameterization: `ln 2 − ln σ + ln φ(ε/σ) + ln Φ(−s·ε·λ/σ)`.
pub fn als_log_density(eps: f64, sigma2_v: f64, sigma2_u: f64, s: f64) -> f64 {
    let sigma = (sigma2_v + sigma2_u).sqrt();
    let lambda = (sigma2_u / sigma2_v).sqrt();
    let z = eps / sigma;
    std::f64::consts::LN_2 - sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
        + ln_phi_cdf(-s * eps * lambda / sigma)
}

/// Draw from `N(mu, sd²)` truncated to `(0, ∞)`: plain rejection when the
/// bound is not deep in the tail, Robert's exponential proposal otherwise.
pub fn truncated_normal(rng: &mut ChaCha8Rng, mu: f64, sd: f64) -> f64 {
    let a = -mu / sd;
    if a < 0.5 {
        loop {
            let z = normal(rng);
            if z > a {
                return mu + sd * z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        let u: f64 = rng.random();
        if u <= (-(z - alpha).powi(2) / 2.0).exp() {
            return mu + sd * z;
        }
    }
}

/// Posterior of the unit inefficiency `w = δ⁻¹ũ` given residuals `eps` by
/// completing the square in `Σ_t (ε_t + s·k_t·w)²/σ²_v + δ²w²/σ²_ũ`.
/// Returns the untruncated mean and standard deviation.
pub fn posterior_by_completing_square(
    eps: &[f64],
    k: &[f64],
    delta: f64,
    sigma2_v: f64,
    sigma2_u: f64,
    s: f64,
) -> (f64, f64) {
    let kk: f64 = k.iter().map(|v| v * v).sum();
    let ke: f64 = k.iter().zip(eps).map(|(a, b)| a * b).sum();
    let precision = kk / sigma2_v + delta * delta / sigma2_u;
    let mean = -s * ke / sigma2_v / precision;
    (mean, precision.sqrt().recip())
}

/// Composite adaptive Simpson integration over `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

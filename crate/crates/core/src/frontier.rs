//! Densities, posterior moments, log-likelihoods and technical efficiency for
//! the normal/half-normal frontier with spatially attenuated inefficiency.
//!
//! Every unit contributes
//!
//! ```text
//! ln 2 − (T/2) ln 2π − ((T−1)/2) ln σ²_v − ½ ln(σ²_v + c·b)
//!   + ln[1 − Φ(−r)] − ε'ε / (2σ²_v) + r²/2
//! ```
//!
//! with `b = δ⁻²σ²_ũ`, `c = η'η`, `a = η'ε` and `r = μ*/σ* =
//! −s·a·√b / (σ_v·√(σ²_v + c·b))`. Working with `r` directly keeps the
//! `σ²_ũ → 0` boundary finite (r → 0, the Gaussian limit) and the Φ term is
//! evaluated in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};
use crate::normal::std_normal_log_cdf_complement as ln_q;
use crate::panel::PanelDataset;
use crate::params::ParamVector;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    sigma2_v: f64,
    sigma2_u: f64,
}

impl VarianceParams {
    pub fn new(sigma2_v: f64, sigma2_u: f64) -> Result<Self> {
        if !(sigma2_v > 0.0 && sigma2_v.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "sigma2_v = {sigma2_v} must be positive and finite"
            )));
        }
        if !(sigma2_u >= 0.0 && sigma2_u.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "sigma2_u = {sigma2_u} must be non-negative and finite"
            )));
        }
        Ok(VarianceParams { sigma2_v, sigma2_u })
    }

    pub fn sigma2_v(&self) -> f64 {
        self.sigma2_v
    }

    pub fn sigma2_u(&self) -> f64 {
        self.sigma2_u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FrontierSign {
    #[default]
    Production,
    Cost,
}

impl FrontierSign {
    /// `s = +1` for production frontiers, `−1` for cost frontiers.
    pub fn value(self) -> f64 {
        match self {
            FrontierSign::Production => 1.0,
            FrontierSign::Cost => -1.0,
        }
    }
}

/// Technical-efficiency formula used for time-varying fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TeMode {
    /// Posterior expectation without the decay factor; constant over periods.
    Paper,
    /// `E[exp(−η_t·u) | ε]`, varying over periods.
    #[default]
    Bc92,
}

/// Period multipliers `exp(−η·(t − T))` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    eta: f64,
    values: Vec<f64>,
}

impl DecayProfile {
    pub fn new(eta: f64, periods: usize) -> Self {
        let tt = periods as f64;
        let values = (1..=periods)
            .map(|t| (-eta * (t as f64 - tt)).exp())
            .collect();
        DecayProfile { eta, values }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot_self(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Per-unit location and scale of the truncated-normal posterior of the
/// (spatially inflated) inefficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    pub mu_star: Vec<f64>,
    pub sigma2_star: Vec<f64>,
}

impl PosteriorMoments {
    pub fn len(&self) -> usize {
        self.mu_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_star.is_empty()
    }
}

/// `ε_it = y_it − x_it·β`, row-major N×T.
pub fn residuals(data: &PanelDataset, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != data.p() {
        return Err(StsfaError::Shape(format!(
            "{} coefficients for {} columns",
            beta.len(),
            data.p()
        )));
    }
    let (n, t) = (data.n(), data.t());
    let mut eps = Vec::with_capacity(n * t);
    for i in 0..n {
        for tt in 0..t {
            let fit: f64 = data.x_row(i, tt).iter().zip(beta).map(|(x, b)| x * b).sum();
            eps.push(data.y_at(i, tt) - fit);
        }
    }
    Ok(eps)
}

fn check_delta(delta: &[f64], n: usize) -> Result<()> {
    if delta.len() != n {
        return Err(StsfaError::Shape(format!(
            "{} δ values for {n} units",
            delta.len()
        )));
    }
    let bad: Vec<usize> = (0..n)
        .filter(|&i| !(delta[i] > 0.0 && delta[i].is_finite()))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(StsfaError::DeltaDomain {
            rho: f64::NAN,
            units: bad,
        })
    }
}

/// Moments for one unit given `a = η'ε`, `c = η'η`.
fn unit_moments(a: f64, c: f64, delta: f64, vp: VarianceParams, s: FrontierSign) -> (f64, f64) {
    let b = vp.sigma2_u / (delta * delta);
    let denom = vp.sigma2_v + c * b;
    let mu = -s.value() * a * b / denom;
    let s2 = b * vp.sigma2_v / denom;
    (mu, s2)
}

/// Time-invariant posterior moments from unit-mean residuals.
pub fn posterior_moments_ti(
    eps_bar: &[f64],
    delta: &[f64],
    vp: VarianceParams,
    periods: usize,
    s: FrontierSign,
) -> Result<PosteriorMoments> {
    if periods == 0 {
        return Err(StsfaError::Invalid("T must be at least 1".into()));
    }
    check_delta(delta, eps_bar.len())?;
    let tt = periods as f64;
    let (mu_star, sigma2_star) = eps_bar
        .iter()
        .zip(delta)
        .map(|(&e, &d)| unit_moments(tt * e, tt, d, vp, s))
        .unzip();
    Ok(PosteriorMoments {
        mu_star,
        sigma2_star,
    })
}

/// Time-varying posterior moments; `eps` is row-major N×T.
pub fn posterior_moments_tv(
    eps: &[f64],
    decay: &DecayProfile,
    delta: &[f64],
    vp: VarianceParams,
    s: FrontierSign,
) -> Result<PosteriorMoments> {
    let t = decay.len();
    if t == 0 || !eps.len().is_multiple_of(t) {
        return Err(StsfaError::Shape(format!(
            "{} residuals for T={t}",
            eps.len()
        )));
    }
    check_delta(delta, eps.len() / t)?;
    let c = decay.dot_self();
    let (mu_star, sigma2_star) = eps
        .chunks(t)
        .zip(delta)
        .map(|(e, &d)| {
            let a: f64 = e.iter().zip(decay.values()).map(|(x, w)| x * w).sum();
            unit_moments(a, c, d, vp, s)
        })
        .unzip();
    Ok(PosteriorMoments {
        mu_star,
        sigma2_star,
    })
}

/// Log-density of one unit's residual vector given `a = η'ε`, `c = η'η`.
fn unit_loglik(
    ee: f64,
    a: f64,
    c: f64,
    t: usize,
    delta: f64,
    vp: VarianceParams,
    s: FrontierSign,
) -> f64 {
    let tt = t as f64;
    let sv2 = vp.sigma2_v;
    let b = vp.sigma2_u / (delta * delta);
    let big = sv2 + c * b;
    let r = -s.value() * a * b.sqrt() / (sv2.sqrt() * big.sqrt());
    std::f64::consts::LN_2 - 0.5 * tt * LN_2PI - 0.5 * (tt - 1.0) * sv2.ln() - 0.5 * big.ln()
        + ln_q(-r)
        - 0.5 * ee / sv2
        + 0.5 * r * r
}

fn finish(total: f64, params: &ParamVector, what: &str) -> Result<f64> {
    if total.is_finite() {
        Ok(total)
    } else {
        Err(StsfaError::NonFinite {
            context: format!(
                "{what} with beta={:?}, sigma2_v={}, sigma2_u={}, rho={:?}, eta={:?}",
                params.beta, params.sigma2_v, params.sigma2_u, params.rho, params.eta
            ),
        })
    }
}

/// Time-invariant panel log-likelihood, constants included. `params.eta` is
/// ignored; ρ enters only through `delta`.
pub fn loglik_time_invariant(
    params: &ParamVector,
    data: &PanelDataset,
    delta: &[f64],
    s: FrontierSign,
) -> Result<f64> {
    let vp = params.variances()?;
    check_delta(delta, data.n())?;
    let eps = residuals(data, &params.beta)?;
    let t = data.t();
    let c = t as f64;
    let mut total = 0.0;
    for (e, &d) in eps.chunks(t).zip(delta) {
        let a: f64 = e.iter().sum();
        let ee: f64 = e.iter().map(|x| x * x).sum();
        total += unit_loglik(ee, a, c, t, d, vp, s);
    }
    finish(total, params, "time-invariant log-likelihood")
}

/// Time-varying panel log-likelihood with decay `exp(−η(t − T))`.
pub fn loglik_time_varying(
    params: &ParamVector,
    data: &PanelDataset,
    delta: &[f64],
    s: FrontierSign,
) -> Result<f64> {
    let vp = params.variances()?;
    check_delta(delta, data.n())?;
    let eps = residuals(data, &params.beta)?;
    let t = data.t();
    let decay = DecayProfile::new(params.eta_or_zero(), t);
    let c = decay.dot_self();
    let mut total = 0.0;
    for (e, &d) in eps.chunks(t).zip(delta) {
        let a: f64 = e.iter().zip(decay.values()).map(|(x, w)| x * w).sum();
        let ee: f64 = e.iter().map(|x| x * x).sum();
        total += unit_loglik(ee, a, c, t, d, vp, s);
    }
    finish(total, params, "time-varying log-likelihood")
}

/// `ln E[exp(−k·u) | ε]` for `u ~ N⁺(μ*, σ*²)`.
fn ln_te(mu: f64, s2: f64, k: f64) -> f64 {
    if s2 <= 0.0 {
        return -k * mu.max(0.0);
    }
    let sd = s2.sqrt();
    let r = mu / sd;
    ln_q(k * sd - r) - ln_q(-r) - k * mu + 0.5 * k * k * s2
}

fn te_from_ln(v: f64) -> f64 {
    v.exp().min(1.0)
}

/// Time-invariant technical efficiency per unit.
pub fn technical_efficiency_ti(pm: &PosteriorMoments) -> Vec<f64> {
    pm.mu_star
        .iter()
        .zip(&pm.sigma2_star)
        .map(|(&m, &s2)| te_from_ln(ln_te(m, s2, 1.0)))
        .collect()
}

/// Time-varying technical efficiency, row-major N×T.
pub fn technical_efficiency_tv(
    pm: &PosteriorMoments,
    decay: &DecayProfile,
    mode: TeMode,
) -> Vec<f64> {
    let t = decay.len();
    let mut out = Vec::with_capacity(pm.len() * t);
    for (&m, &s2) in pm.mu_star.iter().zip(&pm.sigma2_star) {
        match mode {
            TeMode::Paper => {
                let te = te_from_ln(ln_te(m, s2, 1.0));
                out.extend(std::iter::repeat_n(te, t));
            }
            TeMode::Bc92 => out.extend(decay.values().iter().map(|&k| te_from_ln(ln_te(m, s2, k)))),
        }
    }
    out
}

//! Standard errors from a central-difference Hessian of the log-likelihood in
//! natural coordinates.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Relative finite-difference step for the Hessian.
pub const HESSIAN_REL_STEP: f64 = 1e-4;
/// Parameters closer than this to a bound get a marker instead of a number.
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StdError {
    Value(f64),
    Marker(Marker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    /// Estimate sits on (or within tolerance of) a parameter bound.
    Boundary,
    /// Parameter was held fixed during estimation.
    Fixed,
    /// Hessian gave no usable curvature in this direction.
    Unavailable,
}

impl StdError {
    pub fn value(&self) -> Option<f64> {
        match self {
            StdError::Value(v) => Some(*v),
            StdError::Marker(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HessianStdErrors {
    pub std_errors: Vec<StdError>,
    /// Set when the Hessian was not negative definite and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

fn step(x: f64, positive: bool) -> f64 {
    let h = HESSIAN_REL_STEP * x.abs().max(0.1);
    if positive {
        h.min(0.25 * x)
    } else {
        h
    }
}

/// `loglik` takes the full natural vector. `markers[j]` pre-assigns a marker
/// (fixed or boundary parameters are excluded from the Hessian); `positive[j]`
/// keeps steps inside `(0, ∞)` for variance parameters.
pub fn hessian_std_errors<F>(
    loglik: &F,
    at: &[f64],
    markers: &[Option<Marker>],
    positive: &[bool],
) -> HessianStdErrors
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let active: Vec<usize> = (0..at.len()).filter(|&j| markers[j].is_none()).collect();
    let k = active.len();
    let mut out: Vec<StdError> = markers
        .iter()
        .map(|m| StdError::Marker(m.unwrap_or(Marker::Unavailable)))
        .collect();
    if k == 0 {
        return HessianStdErrors {
            std_errors: out,
            pseudo_inverse: false,
        };
    }
    let h: Vec<f64> = active.iter().map(|&j| step(at[j], positive[j])).collect();
    let mut work = at.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| -> f64 {
        for &(a, d) in shifts {
            work[active[a]] += d;
        }
        let v = loglik(&work).unwrap_or(f64::NAN);
        work.copy_from_slice(at);
        v
    };
    let f0 = eval(&[]);
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        let fp = eval(&[(a, h[a])]);
        let fm = eval(&[(a, -h[a])]);
        hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
        for b in 0..a {
            let fpp = eval(&[(a, h[a]), (b, h[b])]);
            let fpm = eval(&[(a, h[a]), (b, -h[b])]);
            let fmp = eval(&[(a, -h[a]), (b, h[b])]);
            let fmm = eval(&[(a, -h[a]), (b, -h[b])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[a] * h[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return HessianStdErrors {
            std_errors: out,
            pseudo_inverse: false,
        };
    }
    let info = -hess;
    let (cov, pseudo) = match info.clone().cholesky() {
        Some(ch) => (ch.inverse(), false),
        None => (pseudo_inverse(&info), true),
    };
    for (a, &j) in active.iter().enumerate() {
        let v = cov[(a, a)];
        out[j] = if v > 0.0 && v.is_finite() {
            StdError::Value(v.sqrt())
        } else {
            StdError::Marker(Marker::Unavailable)
        };
    }
    HessianStdErrors {
        std_errors: out,
        pseudo_inverse: pseudo,
    }
}

/// Moore–Penrose inverse of a symmetric matrix keeping only positive curvature.
fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-10 * max {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / lam;
        }
    }
    out
}

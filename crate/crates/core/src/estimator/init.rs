//! Starting values: pooled OLS for β, a corrected-OLS third-moment split of the
//! residual variance, Moran's I of unit-mean residuals for ρ, and η = 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StsfaError};
use crate::frontier::{residuals, FrontierSign};
use crate::panel::PanelDataset;
use crate::params::ParamVector;
use crate::weights::SpatialWeights;

use super::{ModelSpec, Temporal};

const VARIANCE_FLOOR: f64 = 1e-10;
/// √(2/π)·(4/π − 1): third central moment of a unit half-normal, in magnitude.
fn half_normal_m3() -> f64 {
    let pi = std::f64::consts::PI;
    (2.0 / pi).sqrt() * (4.0 / pi - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub xtx_inv: DMatrix<f64>,
}

/// Pooled least squares of `y` on `X`. Singular designs report the columns
/// that are numerically dependent on earlier ones.
pub fn pooled_ols(data: &PanelDataset) -> Result<OlsFit> {
    let rows = data.n() * data.t();
    let p = data.p();
    let x = DMatrix::from_row_slice(rows, p, data.x());
    let y = DVector::from_column_slice(data.y());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;

    let dependent = dependent_columns(&x);
    if !dependent.is_empty() {
        return Err(StsfaError::Singular {
            columns: dependent
                .iter()
                .map(|&j| data.column_names()[j].clone())
                .collect(),
        });
    }
    let chol = xtx.clone().cholesky().ok_or_else(|| StsfaError::Singular {
        columns: data.column_names().to_vec(),
    })?;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();
    let beta: Vec<f64> = beta.iter().copied().collect();
    let resid = residuals(data, &beta)?;
    Ok(OlsFit {
        beta,
        residuals: resid,
        xtx_inv,
    })
}

/// Columns whose Gram–Schmidt remainder is negligible relative to their norm.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let c = q.dot(&r);
            r -= q * c;
        }
        let rn = r.norm();
        if scale == 0.0 || rn <= 1e-10 * scale {
            out.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    out
}

/// Method-of-moments split of the residual variance into noise and
/// half-normal inefficiency. Returns `(σ²_v, σ²_u, wrong_skew)`; the total
/// inefficiency variance is the pre-spatial `σ²_u` scaled by `δ⁻²`.
pub fn cols_variances(resid: &[f64], sign: FrontierSign) -> (f64, f64, bool) {
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let m2 = resid.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let m3 = resid.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n;
    let floor = VARIANCE_FLOOR * (1.0 + m2);
    // production: ε = v − u is left-skewed, so −s·m3 > 0 is the right sign
    let signed = -sign.value() * m3;
    if signed <= 0.0 || m2 <= 0.0 {
        let half = (0.5 * m2).max(floor);
        return (half, half, signed < 0.0);
    }
    let sigma_u = (signed / half_normal_m3()).cbrt();
    let mut su2 = sigma_u * sigma_u;
    let pi = std::f64::consts::PI;
    let mut sv2 = m2 - (1.0 - 2.0 / pi) * su2;
    if sv2 < 0.05 * m2 {
        sv2 = 0.05 * m2;
        su2 = 0.95 * m2 / (1.0 - 2.0 / pi);
    }
    (sv2.max(floor), su2.max(floor), false)
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub params: ParamVector,
    pub wrong_skew: bool,
    pub moran_i: Option<f64>,
}

/// Builds starting values for `spec` on `data` (already pooled when the spec
/// asks for it) with aligned weights when spatial.
pub fn initialize(
    spec: &ModelSpec,
    data: &PanelDataset,
    weights: Option<&SpatialWeights>,
) -> Result<Initialization> {
    if spec.spatial != weights.is_some() {
        return Err(StsfaError::Invalid(
            "spatial models need weights and non-spatial models take none".into(),
        ));
    }
    let ols = pooled_ols(data)?;
    let (sv2, su2_total, wrong_skew) = cols_variances(&ols.residuals, spec.sign);
    let mut beta = ols.beta.clone();
    if data.has_intercept() && !wrong_skew {
        beta[0] += spec.sign.value() * (su2_total * 2.0 / std::f64::consts::PI).sqrt();
    }

    let (rho, moran, su2) = match weights {
        Some(w) => {
            let t = data.t();
            let means: Vec<f64> = ols
                .residuals
                .chunks(t)
                .map(|c| c.iter().sum::<f64>() / t as f64)
                .collect();
            let moran = w.moran_i(&means);
            let (lo, hi) = w.rho_bounds();
            let rho = moran.clamp(0.99 * lo, 0.99 * hi);
            let delta = w.delta(rho)?;
            let mean_d2 = delta.iter().map(|d| d * d).sum::<f64>() / delta.len() as f64;
            (Some(rho), Some(moran), su2_total * mean_d2)
        }
        None => (None, None, su2_total),
    };
    let eta = matches!(spec.temporal, Temporal::TimeVarying).then_some(0.0);
    Ok(Initialization {
        params: ParamVector {
            beta,
            sigma2_v: sv2,
            sigma2_u: su2,
            rho,
            eta,
        },
        wrong_skew,
        moran_i: moran,
    })
}

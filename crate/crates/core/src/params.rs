//! Model parameters in natural and unconstrained coordinates.
//!
//! Unconstrained layout: `[β_1..β_P, ln σ²_v, ln σ²_ũ, (z_ρ), (η)]` where
//! `ρ = mid + half·tanh(z_ρ)` maps the real line onto the admissible interval.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};
use crate::frontier::VarianceParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: Vec<f64>,
    pub sigma2_v: f64,
    pub sigma2_u: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
}

impl ParamVector {
    pub fn variances(&self) -> Result<VarianceParams> {
        VarianceParams::new(self.sigma2_v, self.sigma2_u)
    }

    pub fn rho_or_zero(&self) -> f64 {
        self.rho.unwrap_or(0.0)
    }

    pub fn eta_or_zero(&self) -> f64 {
        self.eta.unwrap_or(0.0)
    }

    /// Flat natural-coordinate vector in the same order as [`ParamLayout`].
    pub fn to_natural_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma2_v);
        v.push(self.sigma2_u);
        v.extend(self.rho);
        v.extend(self.eta);
        v
    }

    /// Parameter labels matching [`ParamVector::to_natural_vec`].
    pub fn labels(&self, beta_names: &[String]) -> Vec<String> {
        let mut v = beta_names.to_vec();
        v.push("sigma2_v".into());
        v.push("sigma2_u".into());
        if self.rho.is_some() {
            v.push("rho".into());
        }
        if self.eta.is_some() {
            v.push("eta".into());
        }
        v
    }
}

/// Which parameters are free and how they map to the optimizer's space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub p: usize,
    pub spatial: bool,
    pub time_varying: bool,
    pub rho_bounds: (f64, f64),
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.p + 2 + usize::from(self.spatial) + usize::from(self.time_varying)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rho_index(&self) -> Option<usize> {
        self.spatial.then_some(self.p + 2)
    }

    pub fn eta_index(&self) -> Option<usize> {
        self.time_varying
            .then_some(self.p + 2 + usize::from(self.spatial))
    }

    fn rho_map(&self) -> (f64, f64) {
        let (lo, hi) = self.rho_bounds;
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    /// Natural → unconstrained. Fails when a natural value is outside its
    /// domain (non-positive variance, ρ outside the open admissible interval).
    pub fn transform(&self, params: &ParamVector) -> Result<Vec<f64>> {
        if params.beta.len() != self.p {
            return Err(StsfaError::Shape(format!(
                "{} coefficients for a {}-column design",
                params.beta.len(),
                self.p
            )));
        }
        if !(params.sigma2_v > 0.0 && params.sigma2_v.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "sigma2_v = {} must be positive",
                params.sigma2_v
            )));
        }
        if !(params.sigma2_u > 0.0 && params.sigma2_u.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "sigma2_u = {} must be positive to transform",
                params.sigma2_u
            )));
        }
        let mut z = params.beta.clone();
        z.push(params.sigma2_v.ln());
        z.push(params.sigma2_u.ln());
        if self.spatial {
            let rho = params
                .rho
                .ok_or_else(|| StsfaError::Invalid("spatial layout needs rho".into()))?;
            let (lo, hi) = self.rho_bounds;
            if !(rho > lo && rho < hi) {
                return Err(StsfaError::Invalid(format!(
                    "rho = {rho} outside ({lo}, {hi})"
                )));
            }
            let (mid, half) = self.rho_map();
            z.push(((rho - mid) / half).atanh());
        }
        if self.time_varying {
            let eta = params
                .eta
                .ok_or_else(|| StsfaError::Invalid("time-varying layout needs eta".into()))?;
            z.push(eta);
        }
        Ok(z)
    }

    /// Unconstrained → natural.
    pub fn untransform(&self, z: &[f64]) -> ParamVector {
        debug_assert_eq!(z.len(), self.len());
        let p = self.p;
        let rho = self.rho_index().map(|k| {
            let (mid, half) = self.rho_map();
            let (lo, hi) = self.rho_bounds;
            (mid + half * z[k].tanh()).clamp(lo, hi)
        });
        ParamVector {
            beta: z[..p].to_vec(),
            sigma2_v: z[p].exp(),
            sigma2_u: z[p + 1].exp(),
            rho,
            eta: self.eta_index().map(|k| z[k]),
        }
    }

    /// Natural values from a flat vector ordered like `to_natural_vec`.
    pub fn from_natural_vec(&self, v: &[f64]) -> ParamVector {
        let p = self.p;
        ParamVector {
            beta: v[..p].to_vec(),
            sigma2_v: v[p],
            sigma2_u: v[p + 1],
            rho: self.rho_index().map(|k| v[k]),
            eta: self.eta_index().map(|k| v[k]),
        }
    }
}

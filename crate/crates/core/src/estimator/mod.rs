//! Maximum-likelihood fitting of the six model variants.
//!
//! The optimizer works in unconstrained coordinates (see [`crate::params`]):
//! a Nelder–Mead pass localizes the optimum, BFGS with five-point numeric
//! gradients polishes it. Standard errors come from a central-difference
//! Hessian in natural coordinates.

pub mod init;
pub mod optim;
pub mod report;
pub mod stderr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};
use crate::frontier::{self, residuals, DecayProfile, FrontierSign, TeMode};
use crate::panel::PanelDataset;
use crate::params::{ParamLayout, ParamVector};
use crate::weights::SpatialWeights;

use optim::{bfgs, nelder_mead, numeric_gradient, BfgsOptions, SimplexOptions, Status};
pub use stderr::{Marker, StdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temporal {
    CrossSection,
    TimeInvariant,
    TimeVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub temporal: Temporal,
    pub spatial: bool,
    pub sign: FrontierSign,
    pub te_mode: TeMode,
    /// Cross-section only: stack all (unit, period) cells of a panel as
    /// independent observations.
    #[serde(default)]
    pub pooled: bool,
}

impl ModelSpec {
    pub fn new(temporal: Temporal, spatial: bool) -> Self {
        ModelSpec {
            temporal,
            spatial,
            sign: FrontierSign::Production,
            te_mode: TeMode::default(),
            pooled: false,
        }
    }

    /// Short model name as accepted on the command line.
    pub fn name(&self) -> &'static str {
        match (self.temporal, self.spatial) {
            (Temporal::CrossSection, false) => "sfa",
            (Temporal::CrossSection, true) => "ssfa",
            (Temporal::TimeInvariant, false) => "tsfa-ti",
            (Temporal::TimeVarying, false) => "tsfa-tv",
            (Temporal::TimeInvariant, true) => "stsfa-ti",
            (Temporal::TimeVarying, true) => "stsfa-tv",
        }
    }

    pub fn layout(&self, p: usize, rho_bounds: (f64, f64)) -> ParamLayout {
        ParamLayout {
            p,
            spatial: self.spatial,
            time_varying: self.temporal == Temporal::TimeVarying,
            rho_bounds,
        }
    }
}

impl FromStr for ModelSpec {
    type Err = StsfaError;

    fn from_str(s: &str) -> Result<Self> {
        let (temporal, spatial) = match s {
            "sfa" => (Temporal::CrossSection, false),
            "ssfa" => (Temporal::CrossSection, true),
            "tsfa-ti" => (Temporal::TimeInvariant, false),
            "tsfa-tv" => (Temporal::TimeVarying, false),
            "stsfa-ti" => (Temporal::TimeInvariant, true),
            "stsfa-tv" => (Temporal::TimeVarying, true),
            other => return Err(StsfaError::Invalid(format!("unknown model `{other}`"))),
        };
        Ok(ModelSpec::new(temporal, spatial))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Iteration budget shared by the simplex and BFGS stages.
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Nelder–Mead iterations before BFGS; 0 skips the simplex stage.
    pub simplex_iter: usize,
    /// Hold ρ at this value instead of estimating it.
    pub fixed_rho: Option<f64>,
    /// When every unit has the same row sum, ρ only enters through
    /// `σ²_ũ/δ²` and cannot be separated from `σ²_ũ`; hold it at its start value.
    pub pin_unidentified_rho: bool,
    pub init: Option<ParamVector>,
    pub compute_std_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 2000,
            grad_tol: 1e-5,
            step_tol: 1e-9,
            simplex_iter: 400,
            fixed_rho: None,
            pin_unidentified_rho: true,
            init: None,
            compute_std_errors: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Converged,
    MaxIter,
    /// Converged with a parameter within tolerance of its bound.
    Boundary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub labels: Vec<String>,
    pub std_errors: Vec<StdError>,
    pub hessian_fallback: bool,
    pub loglik: f64,
    pub aic: f64,
    pub k: usize,
    /// N×T technical efficiency, rows in unit order.
    pub efficiency: Vec<Vec<f64>>,
    pub convergence: Convergence,
    pub iterations: usize,
    pub init: ParamVector,
    pub init_loglik: f64,
    pub rho_identified: bool,
    /// Mean over units of the spatially inflated inefficiency variance `σ²_ũ/δ_i²`.
    pub sigma2_u_total: f64,
    pub warnings: Vec<String>,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
}

/// `−2·loglik + 2k`.
pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

/// Free-parameter count: `P + 2`, plus one each for ρ and η.
pub fn free_parameters(spec: &ModelSpec, p: usize) -> usize {
    p + 2 + usize::from(spec.spatial) + usize::from(spec.temporal == Temporal::TimeVarying)
}

/// Data and weights in the shape the likelihood consumes.
struct Prepared {
    data: PanelDataset,
    weights: Option<SpatialWeights>,
}

fn prepare(
    spec: &ModelSpec,
    data: &PanelDataset,
    weights: Option<&SpatialWeights>,
) -> Result<Prepared> {
    if spec.spatial != weights.is_some() {
        return Err(StsfaError::Invalid(if spec.spatial {
            format!("model {spec} needs a weights matrix")
        } else {
            format!("model {spec} takes no weights matrix")
        }));
    }
    if let Some(w) = weights {
        w.check_alignment(data.unit_ids())?;
    }
    match spec.temporal {
        Temporal::CrossSection if data.t() > 1 => {
            if !spec.pooled {
                return Err(StsfaError::Invalid(format!(
                    "cross-sectional model on {} periods; pass the pooling flag or use a panel model",
                    data.t()
                )));
            }
            Ok(Prepared {
                data: data.pooled(),
                weights: weights.map(|w| w.replicate_over_periods(data.t())),
            })
        }
        Temporal::TimeVarying if data.t() < 2 => Err(StsfaError::Invalid(
            "time-varying model needs at least two periods".into(),
        )),
        _ => Ok(Prepared {
            data: data.clone(),
            weights: weights.cloned(),
        }),
    }
}

fn delta_for(weights: Option<&SpatialWeights>, n: usize, rho: Option<f64>) -> Result<Vec<f64>> {
    match weights {
        Some(w) => w.delta(rho.unwrap_or(0.0)),
        None => Ok(vec![1.0; n]),
    }
}

/// Log-likelihood of `spec` at natural parameters. Cross-sectional data must
/// already be single-period (pooled if needed).
pub fn model_loglik(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &PanelDataset,
    weights: Option<&SpatialWeights>,
) -> Result<f64> {
    let delta = delta_for(weights, data.n(), params.rho)?;
    match spec.temporal {
        Temporal::TimeVarying => frontier::loglik_time_varying(params, data, &delta, spec.sign),
        _ => frontier::loglik_time_invariant(params, data, &delta, spec.sign),
    }
}

/// Maps between the optimizer's free vector and natural parameters,
/// dropping ρ when it is held fixed.
struct Coordinates {
    layout: ParamLayout,
    fixed_rho: Option<f64>,
}

impl Coordinates {
    fn to_params(&self, free: &[f64]) -> ParamVector {
        match (self.fixed_rho, self.layout.rho_index()) {
            (Some(rho), Some(k)) => {
                let mut z = free.to_vec();
                z.insert(k, 0.0);
                let mut p = self.layout.untransform(&z);
                p.rho = Some(rho);
                p
            }
            _ => self.layout.untransform(free),
        }
    }

    fn to_free(&self, params: &ParamVector) -> Result<Vec<f64>> {
        let mut probe = params.clone();
        if self.fixed_rho.is_some() {
            probe.rho = Some(0.5 * (self.layout.rho_bounds.0 + self.layout.rho_bounds.1));
        }
        let mut z = self.layout.transform(&probe)?;
        if let (Some(_), Some(k)) = (self.fixed_rho, self.layout.rho_index()) {
            z.remove(k);
        }
        Ok(z)
    }
}

/// Fits `spec` to `data` (with `weights` for spatial variants).
pub fn fit(
    spec: &ModelSpec,
    data: &PanelDataset,
    weights: Option<&SpatialWeights>,
    options: &FitOptions,
) -> Result<FitResult> {
    let prep = prepare(spec, data, weights)?;
    let d = &prep.data;
    let w = prep.weights.as_ref();
    let mut warnings = Vec::new();

    let start = match &options.init {
        Some(p) => p.clone(),
        None => {
            let init = init::initialize(spec, d, w)?;
            if init.wrong_skew {
                warnings.push("OLS residual skewness has the wrong sign for this frontier; started from a half/half variance split".into());
            }
            init.params
        }
    };

    let rho_bounds = w.map(|w| w.rho_bounds()).unwrap_or((-1.0, 1.0));
    let layout = spec.layout(d.p(), rho_bounds);
    let mut fixed_rho = None;
    let mut rho_identified = spec.spatial;
    if spec.spatial {
        if let Some(r) = options.fixed_rho {
            fixed_rho = Some(r);
            rho_identified = false;
        } else if options.pin_unidentified_rho && w.is_some_and(|w| w.has_uniform_delta()) {
            fixed_rho = start.rho;
            rho_identified = false;
            warnings.push(format!(
                "all units share one row sum, so rho is not identified separately from sigma2_u; held at its start value {}",
                start.rho.unwrap_or(0.0)
            ));
        }
    }
    let mut start = start;
    if let Some(r) = fixed_rho {
        start.rho = Some(r);
    }

    // out-of-domain starting variances are an initialization failure too
    let init_loglik = model_loglik(spec, &start, d, w).map_err(|e| match e {
        StsfaError::Invalid(msg) => StsfaError::NonFinite {
            context: format!("the starting values ({msg})"),
        },
        other => other,
    })?;
    let coords = Coordinates { layout, fixed_rho };
    let z0 = coords.to_free(&start)?;

    let objective = |z: &[f64]| -> f64 {
        let p = coords.to_params(z);
        match model_loglik(spec, &p, d, w) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let gradient = |z: &[f64]| {
        let steps: Vec<f64> = z.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
        numeric_gradient(&objective, z, &steps)
    };

    let mut iterations = 0;
    let mut z = z0.clone();
    // `max_iter` bounds both stages together
    let simplex_budget = options.simplex_iter.min(options.max_iter);
    if simplex_budget > 0 {
        let scale: Vec<f64> = z0.iter().map(|v| 0.1 * v.abs().max(1.0)).collect();
        let nm = nelder_mead(
            &objective,
            &z0,
            &scale,
            SimplexOptions {
                max_iter: simplex_budget,
                ..SimplexOptions::default()
            },
        );
        iterations += nm.iterations;
        if nm.f <= objective(&z0) {
            z = nm.x;
        }
    }
    let polished = bfgs(
        &objective,
        &gradient,
        &z,
        BfgsOptions {
            max_iter: options.max_iter - iterations,
            grad_tol: options.grad_tol,
            step_tol: options.step_tol,
        },
    );
    iterations += polished.iterations;
    let status = polished.status;
    let mut params = coords.to_params(&polished.x);
    let mut loglik = -polished.f;
    if !(loglik >= init_loglik) {
        params = start.clone();
        loglik = init_loglik;
    }
    if !loglik.is_finite() {
        return Err(StsfaError::NonFinite {
            context: "the optimum".into(),
        });
    }

    let at_boundary = |p: &ParamVector| {
        let su = p.sigma2_u <= stderr::BOUNDARY_TOL;
        let rho = fixed_rho.is_none()
            && p.rho.is_some_and(|r| {
                r - rho_bounds.0 <= stderr::BOUNDARY_TOL || rho_bounds.1 - r <= stderr::BOUNDARY_TOL
            });
        (su, rho)
    };
    let (su_bound, rho_bound) = at_boundary(&params);
    let convergence = match status {
        Status::MaxIter => Convergence::MaxIter,
        _ if su_bound || rho_bound => Convergence::Boundary,
        _ => Convergence::Converged,
    };
    if status == Status::Stalled {
        warnings.push(
            "line search could not improve further; treating the point as a step-tolerance stop"
                .into(),
        );
    }

    let natural = params.to_natural_vec();
    let k = free_parameters(spec, d.p());
    let (std_errors, hessian_fallback) = if options.compute_std_errors {
        let mut markers = vec![None; natural.len()];
        let mut positive = vec![false; natural.len()];
        let p = d.p();
        positive[p] = true;
        positive[p + 1] = true;
        if su_bound {
            markers[p + 1] = Some(Marker::Boundary);
        }
        if let Some(ri) = layout.rho_index() {
            if fixed_rho.is_some() {
                markers[ri] = Some(Marker::Fixed);
            } else if rho_bound {
                markers[ri] = Some(Marker::Boundary);
            }
        }
        let ll = |v: &[f64]| model_loglik(spec, &layout.from_natural_vec(v), d, w).ok();
        let h = stderr::hessian_std_errors(&ll, &natural, &markers, &positive);
        if h.pseudo_inverse {
            warnings
                .push("Hessian not negative definite; standard errors use a pseudo-inverse".into());
        }
        (h.std_errors, h.pseudo_inverse)
    } else {
        (
            vec![StdError::Marker(Marker::Unavailable); natural.len()],
            false,
        )
    };

    let delta = delta_for(w, d.n(), params.rho)?;
    let sigma2_u_total = delta
        .iter()
        .map(|dl| params.sigma2_u / (dl * dl))
        .sum::<f64>()
        / delta.len() as f64;
    let efficiency = efficiency_matrix(spec, &params, d, w, data.n(), data.t())?;

    Ok(FitResult {
        spec: *spec,
        labels: params.labels(d.column_names()),
        params,
        std_errors,
        hessian_fallback,
        loglik,
        aic: aic(loglik, k),
        k,
        efficiency,
        convergence,
        iterations,
        init: start,
        init_loglik,
        rho_identified,
        sigma2_u_total,
        warnings,
        unit_ids: data.unit_ids().to_vec(),
        time_ids: data.time_ids().to_vec(),
    })
}

/// Technical efficiency on prepared data, reshaped to the original N×T grid.
fn efficiency_matrix(
    spec: &ModelSpec,
    params: &ParamVector,
    d: &PanelDataset,
    w: Option<&SpatialWeights>,
    n: usize,
    t: usize,
) -> Result<Vec<Vec<f64>>> {
    let vp = params.variances()?;
    let delta = delta_for(w, d.n(), params.rho)?;
    let eps = residuals(d, &params.beta)?;
    let td = d.t();
    let flat = match spec.temporal {
        Temporal::TimeVarying => {
            let decay = DecayProfile::new(params.eta_or_zero(), td);
            let pm = frontier::posterior_moments_tv(&eps, &decay, &delta, vp, spec.sign)?;
            frontier::technical_efficiency_tv(&pm, &decay, spec.te_mode)
        }
        _ => {
            let means: Vec<f64> = eps
                .chunks(td)
                .map(|c| c.iter().sum::<f64>() / td as f64)
                .collect();
            let pm = frontier::posterior_moments_ti(&means, &delta, vp, td, spec.sign)?;
            frontier::technical_efficiency_ti(&pm)
                .into_iter()
                .flat_map(|te| std::iter::repeat_n(te, td))
                .collect()
        }
    };
    // pooled cross-sections are unit-major over (unit, period) cells, so the
    // flat vector already has the original row-major N×T layout
    Ok(flat.chunks(t).take(n).map(<[f64]>::to_vec).collect())
}

/// Efficiency scores for a finished fit on the data (and weights) it was fitted to.
pub fn efficiency_scores(
    fit: &FitResult,
    data: &PanelDataset,
    weights: Option<&SpatialWeights>,
) -> Result<Vec<Vec<f64>>> {
    let prep = prepare(&fit.spec, data, weights)?;
    efficiency_matrix(
        &fit.spec,
        &fit.params,
        &prep.data,
        prep.weights.as_ref(),
        data.n(),
        data.t(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aic_examples() {
        assert_eq!(aic(0.0, 3), 6.0);
        assert_eq!(aic(100.0, 5), -190.0);
    }

    #[test]
    fn model_names_round_trip() {
        for name in ["sfa", "ssfa", "tsfa-ti", "tsfa-tv", "stsfa-ti", "stsfa-tv"] {
            let spec: ModelSpec = name.parse().unwrap();
            assert_eq!(spec.name(), name);
        }
        assert!("stsfa".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn free_parameter_counts() {
        let count = |name: &str| free_parameters(&name.parse().unwrap(), 2);
        assert_eq!(count("sfa"), 4);
        assert_eq!(count("ssfa"), 5);
        assert_eq!(count("tsfa-tv"), 5);
        assert_eq!(count("stsfa-tv"), 6);
    }
}

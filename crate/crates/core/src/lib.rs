//! Maximum-likelihood estimation of spatio-temporal stochastic frontier models.
//!
//! The crate covers six model variants (cross-section, time-invariant panel and
//! time-varying panel, each with or without spatially correlated inefficiency),
//! technical-efficiency scoring, spatial weight construction and a Monte Carlo
//! harness for bias/sd/MSE studies.
//!
//! Layout:
//! - [`panel`]: balanced panel loading, validation and design matrices.
//! - [`weights`]: sparse spatial weights, standardization, `δ(ρ)` and
//!   `(I − ρW)⁻¹v` solves.
//! - [`normal`] and [`frontier`]: densities, posterior moments, log-likelihoods
//!   and efficiency formulas.
//! - [`params`] and [`estimator`]: parameter transforms, initialization,
//!   optimization, standard errors and AIC.
//! - [`montecarlo`]: data-generating process and replicated experiments.
//! - [`cli`]: the `stsfa` command-line front end.

// `!(x > y)` is used on purpose so NaN falls on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimator;
pub mod frontier;
pub mod montecarlo;
pub mod normal;
pub mod panel;
pub mod params;
pub mod weights;

pub use error::{Result, StsfaError};
pub use estimator::{fit, FitOptions, FitResult, ModelSpec, Temporal};
pub use frontier::{DecayProfile, FrontierSign, PosteriorMoments, TeMode, VarianceParams};
pub use panel::PanelDataset;
pub use params::ParamVector;
pub use weights::SpatialWeights;

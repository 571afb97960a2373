//! Simulation design and replicated estimation experiments.
//!
//! The design is a single-input production frontier
//! `y_it = β0 + β1·x_i + v_i − u_it` on `N` units over `T` periods, with `x_i`
//! and `v_i` drawn once per unit, `u_it = exp(−η(t−T))·[(I−ρW)⁻¹ũ]_i`,
//! `ũ_i ~ |N(0,1)|` and `W` the row-standardized k-nearest-neighbour graph of
//! points drawn uniformly on the unit square.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};
use crate::estimator::{fit, FitOptions, ModelSpec};
use crate::panel::{PanelDataset, INTERCEPT};
use crate::params::ParamVector;
use crate::weights::{knn_weights, SpatialWeights};

/// Noise rule for `v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `N(0.75(π−2)/π, 1)`: a non-zero mean that the intercept absorbs.
    #[default]
    LiteralPaper,
    /// `N(0, 1)`.
    ZeroMean,
}

impl NoiseSpec {
    pub fn mean(self) -> f64 {
        match self {
            NoiseSpec::LiteralPaper => 0.75 * (std::f64::consts::PI - 2.0) / std::f64::consts::PI,
            NoiseSpec::ZeroMean => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    pub beta0: f64,
    pub beta1: f64,
    pub rho: f64,
    pub eta: f64,
    pub k_frac: f64,
    pub v_spec: NoiseSpec,
    pub seed: u64,
    /// Row-standardize the neighbour graph.
    pub standardize: bool,
    /// Draw `v_it` afresh each period instead of once per unit.
    #[serde(default)]
    pub v_iid_over_time: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 100,
            t: 5,
            beta0: 5.0,
            beta1: 5.0,
            rho: 0.0,
            eta: 0.0,
            k_frac: 0.10,
            v_spec: NoiseSpec::LiteralPaper,
            seed: 0,
            standardize: true,
            v_iid_over_time: false,
        }
    }
}

impl DgpConfig {
    pub fn neighbours(&self) -> usize {
        (self.k_frac * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.neighbours();
        if self.n < 2 {
            return Err(StsfaError::Invalid(format!(
                "n = {} must be at least 2",
                self.n
            )));
        }
        if self.t < 1 {
            return Err(StsfaError::Invalid("t must be at least 1".into()));
        }
        if k < 1 || k >= self.n {
            return Err(StsfaError::Invalid(format!(
                "k = round({} · {}) = {k} neighbours must lie in [1, n)",
                self.k_frac, self.n
            )));
        }
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) || !self.eta.is_finite() {
            return Err(StsfaError::Invalid(format!(
                "rho = {}, eta = {} out of range",
                self.rho, self.eta
            )));
        }
        Ok(())
    }

    /// True parameters in the estimator's layout (σ²_v = σ²_ũ = 1).
    pub fn truth(&self) -> ParamVector {
        ParamVector {
            beta: vec![self.beta0, self.beta1],
            sigma2_v: 1.0,
            sigma2_u: 1.0,
            rho: Some(self.rho),
            eta: Some(self.eta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: PanelDataset,
    pub weights: SpatialWeights,
    pub truth: ParamVector,
    /// Inefficiency `u_it`, row-major N×T.
    pub u: Vec<f64>,
}

pub fn simulate_dgp(cfg: &DgpConfig) -> Result<Simulated> {
    cfg.validate()?;
    let (n, t) = (cfg.n, cfg.t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let noise: Normal<f64> = Normal::new(cfg.v_spec.mean(), 1.0).expect("unit sd");
    let v: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit sd");
    let u_tilde: Vec<f64> = (0..n).map(|_| std.sample(&mut rng).abs()).collect();
    // drawn last so the constant-noise design keeps its stream
    let v_extra: Vec<f64> = if cfg.v_iid_over_time {
        (0..n * (t - 1)).map(|_| noise.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };

    let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let mut w = knn_weights(&coords, cfg.neighbours())?;
    if cfg.standardize {
        w = w.row_standardize();
    }
    let w = w.with_unit_ids(ids.clone())?;
    let (lo, hi) = w.rho_bounds();
    if !(cfg.rho > lo && cfg.rho < hi) {
        return Err(StsfaError::Invalid(format!(
            "rho = {} outside ({lo}, {hi}) for these weights",
            cfg.rho
        )));
    }
    let spatial_u = w.spatial_inverse_apply(cfg.rho, &u_tilde)?;

    let tt = t as f64;
    let decay: Vec<f64> = (1..=t)
        .map(|k| (-cfg.eta * (k as f64 - tt)).exp())
        .collect();
    let mut y = Vec::with_capacity(n * t);
    let mut xs = Vec::with_capacity(n * t * 2);
    let mut u = Vec::with_capacity(n * t);
    for i in 0..n {
        for (k, d) in decay.iter().enumerate() {
            let uit = d * spatial_u[i];
            let vit = if cfg.v_iid_over_time && k > 0 {
                v_extra[i * (t - 1) + k - 1]
            } else {
                v[i]
            };
            u.push(uit);
            y.push(cfg.beta0 + cfg.beta1 * x[i] + vit - uit);
            xs.extend([1.0, x[i]]);
        }
    }
    let data = PanelDataset::new(
        ids,
        (1..=t).map(|k| k.to_string()).collect(),
        "y",
        vec![INTERCEPT.to_string(), "x".to_string()],
        y,
        xs,
    )?;
    Ok(Simulated {
        data,
        weights: w,
        truth: cfg.truth(),
        u,
    })
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` in grid cell `cell`:
/// `splitmix64(splitmix64(master ⊕ splitmix64(cell)) ⊕ rep)`.
/// Depends only on its arguments, never on scheduling.
pub fn replicate_seed(master: u64, cell: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(cell as u64)) ^ rep as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
}

/// Per-parameter bias, sample sd (R−1 denominator) and MSE of `estimates`
/// (one row per replicate) around `truth`.
pub fn summarize(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<ParamStats>> {
    let r = estimates.len();
    if r < 2 {
        return Err(StsfaError::Invalid(format!(
            "{r} replicates; need at least 2"
        )));
    }
    if let Some(row) = estimates.iter().find(|row| row.len() != truth.len()) {
        return Err(StsfaError::Shape(format!(
            "{} estimates for {} parameters",
            row.len(),
            truth.len()
        )));
    }
    let rf = r as f64;
    Ok((0..truth.len())
        .map(|j| {
            let mean = estimates.iter().map(|row| row[j]).sum::<f64>() / rf;
            let ss = estimates
                .iter()
                .map(|row| (row[j] - mean).powi(2))
                .sum::<f64>();
            let mse = estimates
                .iter()
                .map(|row| (row[j] - truth[j]).powi(2))
                .sum::<f64>()
                / rf;
            ParamStats {
                bias: mean - truth[j],
                sd: (ss / (rf - 1.0)).sqrt(),
                mse,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replicate {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub converged: bool,
    /// Natural-coordinate estimates; absent when the fit failed.
    pub estimates: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub rho: f64,
    pub eta: f64,
    pub n: usize,
    pub n_converged: usize,
    pub n_total: usize,
    /// `(label, stats)`; stats are absent with fewer than two converged replicates.
    pub params: Vec<(String, Option<ParamStats>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub labels: Vec<String>,
    pub cells: Vec<CellReport>,
    pub replicates: Vec<Replicate>,
    pub runtime_secs: f64,
}

/// Labels of the natural parameter vector for a spec on the simulation design.
pub fn parameter_labels(spec: &ModelSpec) -> Vec<String> {
    let mut truth = DgpConfig::default().truth();
    if !spec.spatial {
        truth.rho = None;
    }
    if spec.temporal != crate::estimator::Temporal::TimeVarying {
        truth.eta = None;
    }
    truth.labels(&["beta0".to_string(), "beta1".to_string()])
}

fn truth_for(spec: &ModelSpec, cfg: &DgpConfig) -> Vec<f64> {
    let mut truth = cfg.truth();
    if !spec.spatial {
        truth.rho = None;
    }
    if spec.temporal != crate::estimator::Temporal::TimeVarying {
        truth.eta = None;
    }
    truth.to_natural_vec()
}

fn run_replicate(
    cfg: &DgpConfig,
    spec: &ModelSpec,
    options: &FitOptions,
    cell: usize,
    rep: usize,
    seed: u64,
) -> Replicate {
    let cfg = DgpConfig {
        seed,
        ..cfg.clone()
    };
    let outcome = simulate_dgp(&cfg).and_then(|sim| {
        let w = spec.spatial.then_some(&sim.weights);
        fit(spec, &sim.data, w, options)
    });
    match outcome {
        Ok(f) => Replicate {
            cell,
            rep,
            seed,
            converged: f.convergence != crate::estimator::Convergence::MaxIter,
            estimates: Some(f.params.to_natural_vec()),
            error: None,
        },
        Err(e) => Replicate {
            cell,
            rep,
            seed,
            converged: false,
            estimates: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs `reps` replicates of every grid cell in parallel on the current rayon
/// pool. Each replicate's seed comes from [`replicate_seed`], and results are
/// reduced in (cell, replicate) order, so the report does not depend on the
/// thread count. Non-converged replicates are counted but excluded from the
/// moments. Standard errors are skipped.
pub fn run_experiment(
    grid: &[DgpConfig],
    reps: usize,
    spec: &ModelSpec,
    master_seed: u64,
    options: &FitOptions,
) -> Result<MonteCarloReport> {
    if reps < 2 {
        return Err(StsfaError::Invalid(format!(
            "reps = {reps}; need at least 2"
        )));
    }
    if grid.is_empty() {
        return Err(StsfaError::Invalid("empty grid".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let options = FitOptions {
        compute_std_errors: false,
        ..options.clone()
    };
    let started = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let replicates: Vec<Replicate> = jobs
        .par_iter()
        .map(|&(c, r)| {
            run_replicate(
                &grid[c],
                spec,
                &options,
                c,
                r,
                replicate_seed(master_seed, c, r),
            )
        })
        .collect();

    let labels = parameter_labels(spec);
    let cells = grid
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let reps_here = &replicates[c * reps..(c + 1) * reps];
            let ok: Vec<Vec<f64>> = reps_here
                .iter()
                .filter(|r| r.converged)
                .filter_map(|r| r.estimates.clone())
                .collect();
            let stats = summarize(&ok, &truth_for(spec, cfg)).ok();
            CellReport {
                rho: cfg.rho,
                eta: cfg.eta,
                n: cfg.n,
                n_converged: ok.len(),
                n_total: reps,
                params: labels
                    .iter()
                    .enumerate()
                    .map(|(j, l)| (l.clone(), stats.as_ref().map(|s| s[j])))
                    .collect(),
            }
        })
        .collect();
    Ok(MonteCarloReport {
        labels,
        cells,
        replicates,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

/// Full grid: every `(ρ, η, N)` combination with the other fields from `base`.
pub fn grid(base: &DgpConfig, ns: &[usize], rhos: &[f64], etas: &[f64]) -> Vec<DgpConfig> {
    let mut out = Vec::new();
    for &n in ns {
        for &rho in rhos {
            for &eta in etas {
                out.push(DgpConfig {
                    n,
                    rho,
                    eta,
                    ..base.clone()
                });
            }
        }
    }
    out
}

fn num(x: f64) -> String {
    format!("{x}")
}

impl MonteCarloReport {
    /// One row per cell × parameter: `rho,eta,n,param,bias,sd,mse,n_converged`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,eta,n,param,bias,sd,mse,n_converged\n");
        for c in &self.cells {
            for (label, s) in &c.params {
                let (b, sd, m) = match s {
                    Some(s) => (num(s.bias), num(s.sd), num(s.mse)),
                    None => ("NA".into(), "NA".into(), "NA".into()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{label},{b},{sd},{m},{}",
                    num(c.rho),
                    num(c.eta),
                    c.n,
                    c.n_converged
                );
            }
        }
        out
    }

    /// Per-replicate estimates: `rho,eta,n,rep,seed,converged,<params...>`.
    pub fn estimates_csv(&self, grid: &[DgpConfig]) -> String {
        let mut out = format!("rho,eta,n,rep,seed,converged,{}\n", self.labels.join(","));
        for r in &self.replicates {
            let cfg = &grid[r.cell];
            let vals = match &r.estimates {
                Some(v) => v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(","),
                None => vec!["NA"; self.labels.len()].join(","),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{vals}",
                num(cfg.rho),
                num(cfg.eta),
                cfg.n,
                r.rep,
                r.seed,
                r.converged
            );
        }
        out
    }

    /// Sample sizes present in the report, in first-appearance order.
    pub fn sample_sizes(&self) -> Vec<usize> {
        let mut ns = Vec::new();
        for c in &self.cells {
            if !ns.contains(&c.n) {
                ns.push(c.n);
            }
        }
        ns
    }

    /// Table for one sample size: a block per parameter, rows η × {bias, sd,
    /// MSE}, columns ρ.
    pub fn text_table(&self, n: usize) -> String {
        let cells: Vec<&CellReport> = self.cells.iter().filter(|c| c.n == n).collect();
        let mut rhos: Vec<f64> = Vec::new();
        let mut etas: Vec<f64> = Vec::new();
        for c in &cells {
            if !rhos.contains(&c.rho) {
                rhos.push(c.rho);
            }
            if !etas.contains(&c.eta) {
                etas.push(c.eta);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "Monte Carlo results ({n} units)");
        let _ = write!(out, "{:<10} {:>7} {:<5}", "parameter", "eta", "");
        for r in &rhos {
            let _ = write!(out, " {:>10}", format!("rho={r}"));
        }
        let _ = writeln!(out);
        for (j, label) in self.labels.iter().enumerate() {
            for e in &etas {
                for (stat, pick) in [("bias", 0usize), ("sd", 1), ("MSE", 2)] {
                    let _ = write!(
                        out,
                        "{:<10} {:>7} {:<5}",
                        if stat == "bias" { label.as_str() } else { "" },
                        if stat == "bias" {
                            num(*e)
                        } else {
                            String::new()
                        },
                        stat
                    );
                    for r in &rhos {
                        let cell = cells.iter().find(|c| c.rho == *r && c.eta == *e);
                        let v = cell
                            .and_then(|c| c.params[j].1)
                            .map(|s| [s.bias, s.sd, s.mse][pick]);
                        let txt = v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
                        let _ = write!(out, " {txt:>10}");
                    }
                    let _ = writeln!(out);
                }
            }
            let _ = writeln!(out);
        }
        let _ = write!(out, "converged/total:");
        for c in &cells {
            let _ = write!(
                out,
                " (rho={}, eta={}) {}/{}",
                c.rho, c.eta, c.n_converged, c.n_total
            );
        }
        let _ = writeln!(out);
        out
    }
}

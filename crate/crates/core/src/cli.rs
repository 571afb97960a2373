//! The `stsfa` command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 weights not aligned with the
//! data, 3 optimizer hit its iteration limit (results still written),
//! 4 non-finite likelihood at the starting values.
//!
//! Every command writes `manifest.json` next to its outputs; `stsfa replay
//! --manifest FILE` re-runs the recorded command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::StsfaError;
use crate::estimator::{fit, report, Convergence, FitOptions, ModelSpec};
use crate::frontier::{FrontierSign, TeMode};
use crate::montecarlo::{self, DgpConfig, NoiseSpec};
use crate::panel::{load_panel_csv, PanelSchema};
use crate::weights::{self, SpatialWeights};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_MISALIGNED: i32 = 2;
pub const EXIT_MAX_ITER: i32 = 3;
pub const EXIT_NONFINITE_START: i32 = 4;

/// Environment variable giving the default `mc` thread count.
pub const THREADS_ENV: &str = "STSFA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "stsfa",
    version,
    about = "Spatio-temporal stochastic frontier estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a frontier model to a panel CSV.
    Estimate(EstimateArgs),
    /// Build a spatial weights matrix from coordinates or group labels.
    Weights(WeightsArgs),
    /// Run a Monte Carlo experiment over a (rho, eta, n) grid.
    Mc(McArgs),
    /// Simulate one dataset from the Monte Carlo design.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum WeightsFormat {
    Triplet,
    Groups,
    Dense,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum TeModeArg {
    Paper,
    Bc92,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum VSpecArg {
    Literal,
    ZeroMean,
}

impl From<VSpecArg> for NoiseSpec {
    fn from(v: VSpecArg) -> Self {
        match v {
            VSpecArg::Literal => NoiseSpec::LiteralPaper,
            VSpecArg::ZeroMean => NoiseSpec::ZeroMean,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    unit: String,
    #[arg(long)]
    time: String,
    #[arg(long)]
    y: String,
    /// Input columns, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    /// sfa | ssfa | tsfa-ti | tsfa-tv | stsfa-ti | stsfa-tv
    #[arg(long)]
    model: String,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    wformat: Option<WeightsFormat>,
    /// Row-standardize the weights after loading.
    #[arg(long)]
    standardize: bool,
    /// Cost frontier (s = −1) instead of production.
    #[arg(long)]
    cost: bool,
    #[arg(long, value_enum, default_value = "bc92")]
    te_mode: TeModeArg,
    /// Columns to log-transform (inputs and/or the output), comma separated.
    #[arg(long, value_delimiter = ',')]
    log_x: Vec<String>,
    #[arg(long)]
    no_intercept: bool,
    /// Pool all periods for cross-sectional models.
    #[arg(long)]
    pooled: bool,
    /// Hold rho at this value.
    #[arg(long)]
    fix_rho: Option<f64>,
    /// Estimate rho even when all units share one row sum.
    #[arg(long)]
    free_rho: bool,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct WeightsArgs {
    /// `unit_id,x,y` coordinates.
    #[arg(long, requires = "knn", conflicts_with = "groups")]
    coords: Option<PathBuf>,
    #[arg(long)]
    knn: Option<usize>,
    /// `unit_id,group` labels.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct McArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
    n: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.05,0.2,0.4,0.6,0.8",
        allow_hyphen_values = true
    )]
    rho: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "-0.10,-0.05,0,0.05,0.10",
        allow_hyphen_values = true
    )]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    t: usize,
    #[arg(long, value_enum, default_value = "literal")]
    v_spec: VSpecArg,
    #[arg(long, default_value = "stsfa-tv")]
    model: String,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write per-replicate estimates.
    #[arg(long)]
    estimates: bool,
    /// Draw the noise afresh each period instead of once per unit.
    #[arg(long)]
    v_iid: bool,
    /// Write the planned grid and stop.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    t: usize,
    #[arg(long, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, allow_hyphen_values = true)]
    eta: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "literal")]
    v_spec: VSpecArg,
    #[arg(long, default_value_t = 0.10)]
    k_frac: f64,
    /// Draw the noise afresh each period instead of once per unit.
    #[arg(long)]
    v_iid: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub inputs: Vec<String>,
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub out_dir: String,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<StsfaError> for Failure {
    fn from(e: StsfaError) -> Self {
        let code = match e {
            StsfaError::Misaligned(_) => EXIT_MISALIGNED,
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| StsfaError::io(path, e).into())
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| StsfaError::io(dir, e).into())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    let argv = args[1..].to_vec();
    match dispatch(cli.command, argv) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<i32, Failure> {
    let started = Instant::now();
    let (name, out, flags, inputs, seed, code) = match command {
        Command::Estimate(a) => {
            let code = cmd_estimate(&a)?;
            let inputs = std::iter::once(&a.data)
                .chain(&a.weights)
                .map(|p| p.display().to_string())
                .collect();
            (
                "estimate",
                a.out.clone(),
                serde_json::to_value(&a),
                inputs,
                None,
                code,
            )
        }
        Command::Weights(a) => {
            cmd_weights(&a)?;
            let inputs = a
                .coords
                .iter()
                .chain(&a.groups)
                .map(|p| p.display().to_string())
                .collect();
            (
                "weights",
                a.out.clone(),
                serde_json::to_value(&a),
                inputs,
                None,
                EXIT_OK,
            )
        }
        Command::Mc(a) => {
            cmd_mc(&a)?;
            (
                "mc",
                a.out.clone(),
                serde_json::to_value(&a),
                Vec::new(),
                Some(a.seed),
                EXIT_OK,
            )
        }
        Command::Simulate(a) => {
            cmd_simulate(&a)?;
            (
                "simulate",
                a.out.clone(),
                serde_json::to_value(&a),
                Vec::new(),
                Some(a.seed),
                EXIT_OK,
            )
        }
        Command::Replay(a) => return cmd_replay(&a),
    };
    let manifest = RunManifest {
        command: name.into(),
        argv,
        inputs,
        flags: flags.map_err(StsfaError::from)?,
        seed,
        out_dir: out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(StsfaError::from)?;
    write(&out.join("manifest.json"), &(text + "\n"))?;
    Ok(code)
}

fn cmd_replay(a: &ReplayArgs) -> Result<i32, Failure> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| StsfaError::io(&a.manifest, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(StsfaError::from)?;
    let mut argv = m.argv.clone();
    if let Some(out) = &a.out {
        let pos = argv
            .iter()
            .position(|s| s == "--out")
            .ok_or_else(|| invalid("manifest command line has no --out"))?;
        argv[pos + 1] = out.display().to_string();
    }
    let mut full = vec!["stsfa".to_string()];
    full.extend(argv);
    Ok(run(full))
}

/// Loads weights and reorders them to the data's unit order when they carry
/// unit ids covering exactly the same units.
fn load_weights(
    path: &Path,
    format: WeightsFormat,
    n: usize,
    units: &[String],
) -> Result<SpatialWeights, Failure> {
    let w = match format {
        WeightsFormat::Triplet => weights::read_triplets(path, Some(n))?,
        WeightsFormat::Dense => weights::read_dense(path)?,
        WeightsFormat::Groups => {
            let (w, warnings) = weights::read_groups(path)?;
            for msg in warnings {
                eprintln!("warning: {msg}");
            }
            w
        }
    };
    Ok(align_to_units(w, units))
}

fn align_to_units(w: SpatialWeights, units: &[String]) -> SpatialWeights {
    let Some(ids) = w.unit_ids() else { return w };
    if ids.len() != units.len() || ids == units {
        return w;
    }
    let pos: std::collections::HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect();
    let perm: Option<Vec<usize>> = units.iter().map(|u| pos.get(u.as_str()).copied()).collect();
    match perm {
        Some(p) => w.permute(&p),
        None => w,
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<i32, Failure> {
    let mut spec: ModelSpec = a.model.parse()?;
    if !spec.spatial
        && (a.weights.is_some() || a.wformat.is_some() || a.fix_rho.is_some() || a.free_rho)
    {
        return Err(invalid(format!(
            "model {} takes no weights or rho flags",
            spec
        )));
    }
    if spec.spatial && a.weights.is_none() {
        return Err(invalid(format!("model {} needs --weights", spec)));
    }
    spec.sign = if a.cost {
        FrontierSign::Cost
    } else {
        FrontierSign::Production
    };
    spec.te_mode = match a.te_mode {
        TeModeArg::Paper => TeMode::Paper,
        TeModeArg::Bc92 => TeMode::Bc92,
    };
    spec.pooled = a.pooled;

    let schema = PanelSchema {
        unit: a.unit.clone(),
        time: a.time.clone(),
        output: a.y.clone(),
        inputs: a.x.clone(),
        intercept: !a.no_intercept,
    };
    let data = load_panel_csv(&a.data, &schema)?.design_matrix(&a.log_x)?;
    let w = match &a.weights {
        Some(path) => {
            let mut w = load_weights(
                path,
                a.wformat.unwrap_or(WeightsFormat::Triplet),
                data.n(),
                data.unit_ids(),
            )?;
            if a.standardize {
                w = w.row_standardize();
            }
            Some(w)
        }
        None => None,
    };
    let options = FitOptions {
        max_iter: a.max_iter,
        fixed_rho: a.fix_rho,
        pin_unidentified_rho: !a.free_rho,
        ..FitOptions::default()
    };
    let result = fit(&spec, &data, w.as_ref(), &options).map_err(|e| match e {
        StsfaError::NonFinite { .. } => Failure {
            code: EXIT_NONFINITE_START,
            message: e.to_string(),
        },
        other => other.into(),
    })?;

    ensure_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&result).map_err(StsfaError::from)?;
    write(&a.out.join("fit.json"), &(json + "\n"))?;
    let mut eff = String::from("unit,time,te\n");
    for (u, row) in result.unit_ids.iter().zip(&result.efficiency) {
        for (t, te) in result.time_ids.iter().zip(row) {
            eff.push_str(&format!("{u},{t},{te}\n"));
        }
    }
    write(&a.out.join("efficiency.csv"), &eff)?;
    let table = report::render_table(&result);
    write(&a.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(if result.convergence == Convergence::MaxIter {
        EXIT_MAX_ITER
    } else {
        EXIT_OK
    })
}

fn cmd_weights(a: &WeightsArgs) -> Result<(), Failure> {
    let (w, ids) = match (&a.coords, a.knn, &a.groups) {
        (Some(path), Some(k), None) => {
            let (ids, coords) = weights::read_coords(path)?;
            (weights::knn_weights(&coords, k)?, ids)
        }
        (None, None, Some(path)) => {
            let (w, warnings) = weights::read_groups(path)?;
            for msg in warnings {
                eprintln!("warning: {msg}");
            }
            let ids = w.unit_ids().map(<[String]>::to_vec).unwrap_or_default();
            (w, ids)
        }
        _ => return Err(invalid("give either --coords with --knn, or --groups")),
    };
    let w = if a.standardize {
        w.row_standardize()
    } else {
        w
    };
    ensure_dir(&a.out)?;
    let mut buf = Vec::new();
    w.write_triplets(&mut buf)?;
    write(&a.out.join("weights.csv"), &String::from_utf8_lossy(&buf))?;
    let mut units = String::from("index,unit_id\n");
    for (k, id) in ids.iter().enumerate() {
        units.push_str(&format!("{k},{id}\n"));
    }
    write(&a.out.join("units.csv"), &units)?;
    let summary = w.summary();
    let text = serde_json::to_string_pretty(&summary).map_err(StsfaError::from)?;
    write(&a.out.join("summary.json"), &(text.clone() + "\n"))?;
    println!(
        "n = {}, nnz = {}, row sums in [{}, {}]",
        summary.n, summary.nnz, summary.min_row_sum, summary.max_row_sum
    );
    Ok(())
}

fn cmd_mc(a: &McArgs) -> Result<(), Failure> {
    let spec: ModelSpec = a.model.parse()?;
    if a.n.is_empty() || a.rho.is_empty() || a.eta.is_empty() {
        return Err(invalid("grid lists must not be empty"));
    }
    if a.reps < 2 {
        return Err(invalid("--reps must be at least 2"));
    }
    let base = DgpConfig {
        t: a.t,
        v_spec: a.v_spec.into(),
        v_iid_over_time: a.v_iid,
        ..DgpConfig::default()
    };
    let grid = montecarlo::grid(&base, &a.n, &a.rho, &a.eta);
    for cfg in &grid {
        cfg.validate()?;
    }
    if a.dry_run {
        ensure_dir(&a.out)?;
        let mut plan = String::from("cell,rho,eta,n\n");
        for (c, cfg) in grid.iter().enumerate() {
            plan.push_str(&format!("{c},{},{},{}\n", cfg.rho, cfg.eta, cfg.n));
        }
        write(&a.out.join("grid.csv"), &plan)?;
        println!("{} cells x {} reps", grid.len(), a.reps);
        return Ok(());
    }
    let threads = a
        .threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let report = pool.install(|| {
        montecarlo::run_experiment(&grid, a.reps, &spec, a.seed, &FitOptions::default())
    })?;

    ensure_dir(&a.out)?;
    write(&a.out.join("report.csv"), &report.to_csv())?;
    for n in report.sample_sizes() {
        write(
            &a.out.join(format!("table_n{n}.txt")),
            &report.text_table(n),
        )?;
    }
    if a.estimates {
        write(&a.out.join("estimates.csv"), &report.estimates_csv(&grid))?;
    }
    let failed = report.replicates.iter().filter(|r| !r.converged).count();
    println!(
        "{} cells x {} reps in {:.1}s ({} replicates excluded as non-converged)",
        grid.len(),
        a.reps,
        report.runtime_secs,
        failed
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = DgpConfig {
        n: a.n,
        t: a.t,
        rho: a.rho,
        eta: a.eta,
        seed: a.seed,
        v_spec: a.v_spec.into(),
        k_frac: a.k_frac,
        v_iid_over_time: a.v_iid,
        ..DgpConfig::default()
    };
    let sim = montecarlo::simulate_dgp(&cfg)?;
    ensure_dir(&a.out)?;
    let d = &sim.data;
    let mut panel = String::from("unit,time,y,x,u\n");
    for i in 0..d.n() {
        for t in 0..d.t() {
            panel.push_str(&format!(
                "{},{},{},{},{}\n",
                d.unit_ids()[i],
                d.time_ids()[t],
                d.y_at(i, t),
                d.x_row(i, t)[1],
                sim.u[i * d.t() + t]
            ));
        }
    }
    write(&a.out.join("panel.csv"), &panel)?;
    let mut buf = Vec::new();
    sim.weights.write_triplets(&mut buf)?;
    write(&a.out.join("weights.csv"), &String::from_utf8_lossy(&buf))?;
    let truth = serde_json::json!({ "config": cfg, "params": sim.truth });
    let text = serde_json::to_string_pretty(&truth).map_err(StsfaError::from)?;
    write(&a.out.join("truth.json"), &(text + "\n"))?;
    Ok(())
}

//! Experiment runner: reads a JSON config, runs one of the solvers and writes
//! CSV/JSON records plus one summary line per sweep point.

pub mod config;
pub mod records;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use spinn_core::collocation::{solve, ButcherTableau, NetConfig, StepConfig, StepRecord};
use spinn_core::expansion::{hyperbolic_index_set, Hyperbolicity};
use spinn_core::inverse::{infer_trajectory, recover_source, source_truncation_error, InferConfig, WindowObservations};
use spinn_core::net::parameter_count;
use spinn_core::problems::{fit_dims, fit_function, matched_width, FitDataset, FitMode, FitResult};
use spinn_core::reference::cn_solve;

pub use config::{load, Command, FitSettings, RunConfig};
use records::{emit_records, fmt_f64, table_to_csv, write_file};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<spinn_core::Error> for CliError {
    fn from(e: spinn_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "spinn", version, about = "Spectrally adapted PINN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Time-step a built-in problem with the collocation network.
    Solve(Common),
    /// Fit the sampled example function in spectral and direct form.
    Fit(Common),
    /// Infer the diffusivity from noisy snapshots.
    Infer(Common),
    /// Recover the heat source over a λ × σ grid.
    Recover(Common),
    /// Count hyperbolic-cross indices.
    Table2(Common),
    /// Crank–Nicolson reference runs over a list of step sizes.
    Cn(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `stepping.dt=0.1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cmd {
    fn parts(&self) -> (Command, &Common) {
        match self {
            Cmd::Solve(c) => (Command::Solve, c),
            Cmd::Fit(c) => (Command::Fit, c),
            Cmd::Infer(c) => (Command::Infer, c),
            Cmd::Recover(c) => (Command::Recover, c),
            Cmd::Table2(c) => (Command::Table2, c),
            Cmd::Cn(c) => (Command::Cn, c),
        }
    }
}

/// Loads, validates and runs; returns the summary lines.
pub fn execute(cmd: &Cmd) -> Result<Vec<String>, CliError> {
    let (command, common) = cmd.parts();
    let mut cfg = load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.seeds.clear();
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate(command)?;
    let threads = thread_cap()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    run(command, &cfg, &out, threads)
}

/// `SPINN_THREADS`, if set, caps how many sweep points run at once.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("SPINN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Invalid(format!("SPINN_THREADS: expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Vec<String>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match command {
        Command::Solve => run_solve(cfg, out),
        Command::Fit => run_fit(cfg, out),
        Command::Infer => run_infer(cfg, out),
        Command::Recover => run_recover(cfg, out),
        Command::Table2 => run_table2(cfg, out),
        Command::Cn => run_cn(cfg, out),
    })
}

/// Runs every point, keeps the outputs in sweep order and reports the first failure.
fn sweep<T: Send>(n: usize, f: impl Fn(usize) -> Result<T, CliError> + Sync) -> Result<Vec<T>, CliError> {
    let results: Vec<Result<T, CliError>> = (0..n).into_par_iter().map(|i| f(i)).collect();
    results.into_iter().collect()
}

fn with_seed(net: &NetConfig, seed: u64) -> NetConfig {
    let mut n = *net;
    n.train.seed = seed;
    n
}

fn last(records: &[StepRecord]) -> String {
    match records.last() {
        Some(r) => format!(
            "steps={} t={} l2_error={} N={} beta={} x_L={}",
            records.len(),
            r.t,
            r.l2_error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "n/a".into()),
            r.n,
            r.beta.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>().join("/"),
            format_args!("{:.4}", r.x_l),
        ),
        None => "steps=0".into(),
    }
}

fn run_solve(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = cfg.problem_for(Command::Solve)?;
    let disc = cfg.discretization(&p);
    let seeds = cfg.seeds();
    sweep(seeds.len(), |i| {
        let seed = seeds[i];
        let step = StepConfig {
            stages: cfg.stepping.stages,
            dt: cfg.stepping.dt,
            net: with_seed(&cfg.net, seed),
            adaptive: cfg.adaptive,
            boundary_mode: cfg.stepping.boundary_mode,
            record_wall_time: cfg.record_wall_time,
        };
        let res = solve(&p, &disc, cfg.stepping.t_end, &step)?;
        if !res.records.is_empty() {
            emit_records(&res.records, out, &format!("solve_seed{seed}"))?;
        }
        if let Some(e) = res.failure {
            return Err(CliError::Runtime(format!("seed {seed} stopped after {} steps: {e}", res.records.len())));
        }
        Ok(format!("solve problem={} seed={seed} {}", p.id, last(&res.records)))
    })
}

/// Spectral and parameter-matched direct fits of the example function on one sample.
#[derive(Debug, Clone)]
pub struct FitPair {
    pub spectral: FitResult,
    pub direct: FitResult,
    pub spectral_params: usize,
    pub direct_params: usize,
}

pub fn fit_pair(f: &FitSettings, seed: u64) -> Result<FitPair, CliError> {
    let data = FitDataset::example(f.points_per_half, seed)?;
    let (train_set, test_set) = data.split();
    let mut train = f.train;
    train.seed = seed;
    let spectral = fit_dims(FitMode::Spectral, f.order, f.spectral_hidden_layers, f.width);
    let budget = parameter_count(&spectral);
    let direct = fit_dims(FitMode::Direct, 0, f.direct_hidden_layers, matched_width(budget, f.direct_hidden_layers));
    Ok(FitPair {
        spectral: fit_function(&train_set, &test_set, FitMode::Spectral, &f.basis, f.order, &spectral, &train)?,
        direct: fit_function(&train_set, &test_set, FitMode::Direct, &f.basis, f.order, &direct, &train)?,
        spectral_params: budget,
        direct_params: parameter_count(&direct),
    })
}

fn run_fit(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let seeds = cfg.seeds();
    sweep(seeds.len(), |i| {
        let seed = seeds[i];
        let pair = fit_pair(&cfg.fit, seed)?;
        let (s, d) = (&pair.spectral, &pair.direct);
        let rows: Vec<Vec<String>> = (0..s.train_mse.len().max(d.train_mse.len()))
            .map(|e| {
                let cell = |v: &[f64]| v.get(e).map(|x| fmt_f64(*x)).unwrap_or_default();
                vec![(e + 1).to_string(), cell(&s.train_mse), cell(&s.test_mse), cell(&d.train_mse), cell(&d.test_mse)]
            })
            .collect();
        let header = ["epoch", "spectral_train_mse", "spectral_test_mse", "direct_train_mse", "direct_test_mse"];
        write_file(&out.join(format!("fit_seed{seed}.csv")), &table_to_csv(&header, &rows)?)?;
        Ok(format!(
            "fit seed={seed} params={}/{} spectral_test_mse={:.4e} direct_test_mse={:.4e}",
            pair.spectral_params,
            pair.direct_params,
            s.final_test_mse(),
            d.final_test_mse()
        ))
    })
}

fn run_infer(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = cfg.problem_for(Command::Infer)?;
    let disc = cfg.discretization(&p);
    let seeds = cfg.seeds();
    let sigmas = &cfg.inverse.sigmas;
    let points: Vec<(usize, f64, u64)> = sigmas
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| seeds.iter().map(move |&seed| (k, s, seed)))
        .collect();
    let results = sweep(points.len(), |i| {
        let (k, sigma, seed) = points[i];
        let ic = InferConfig {
            stages: cfg.stepping.stages,
            dt: cfg.stepping.dt,
            windows: cfg.inverse.windows,
            sigma,
            theta_init: cfg.inverse.theta_init,
            net: with_seed(&cfg.net, seed),
            adaptive: cfg.adaptive,
            seed,
        };
        let res = infer_trajectory(&p, &disc, &ic)?;
        let recs: Vec<StepRecord> = res.iter().map(|r| r.record.clone()).collect();
        emit_records(&recs, out, &format!("infer_sigma{k}_seed{seed}"))?;
        Ok((sigma, seed, res))
    })?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (sigma, seed, res) in &results {
        for (w, r) in res.iter().enumerate() {
            rows.push(vec![
                fmt_f64(*sigma),
                seed.to_string(),
                w.to_string(),
                fmt_f64(r.theta),
                fmt_f64(r.sse_left),
                fmt_f64(r.sse_right),
            ]);
        }
        let thetas: Vec<String> = res.iter().map(|r| format!("{:.6}", r.theta)).collect();
        lines.push(format!("infer kappa={} sigma={sigma} seed={seed} theta={}", cfg.inverse.kappa, thetas.join("/")));
    }
    let header = ["sigma", "seed", "window", "theta", "sse_left", "sse_right"];
    write_file(&out.join("infer.csv"), &table_to_csv(&header, &rows)?)?;
    Ok(lines)
}

fn run_recover(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = cfg.problem_for(Command::Recover)?;
    let disc = cfg.discretization(&p);
    let [basis] = disc.bases.as_slice() else {
        return Err(CliError::Runtime("source recovery needs a one-dimensional problem".into()));
    };
    let n = disc.order;
    let dt = cfg.stepping.dt;
    let tab = ButcherTableau::gauss_legendre(cfg.stepping.stages)?;
    let times: Vec<f64> = tab.c.iter().map(|c| c * dt).collect();
    let floor = match &p.source {
        Some(f) => Some(source_truncation_error(f, basis, n, &times)?),
        None => None,
    };
    let seeds = cfg.seeds();
    let inv = &cfg.inverse;
    let mut points = Vec::new();
    for &sigma in &inv.sigmas {
        for &lambda in &inv.lambdas {
            for &seed in &seeds {
                points.push((sigma, lambda, seed));
            }
        }
    }
    let results = sweep(points.len(), |i| {
        let (sigma, lambda, seed) = points[i];
        let obs = WindowObservations::observe(&p, basis, n, &tab, 0.0, dt, sigma, seed)?;
        Ok(recover_source(&p, &obs, &tab, lambda, &with_seed(&cfg.net, seed))?)
    })?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for ((sigma, lambda, seed), r) in points.iter().zip(&results) {
        rows.push(vec![
            fmt_f64(*sigma),
            fmt_f64(*lambda),
            seed.to_string(),
            fmt_f64(r.sse_left),
            fmt_f64(r.sse_right),
            fmt_f64(r.sse()),
            fmt_f64(r.h_norm),
            opt(r.reconstruction_error),
            opt(floor),
            r.epochs.to_string(),
        ]);
        lines.push(format!(
            "recover sigma={sigma} lambda={lambda} seed={seed} sse0={:.4e} h_norm={:.4e} error={}",
            r.sse(),
            r.h_norm,
            r.reconstruction_error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "n/a".into())
        ));
    }
    let header = [
        "sigma",
        "lambda",
        "seed",
        "sse_left",
        "sse_right",
        "sse0",
        "h_norm",
        "reconstruction_error",
        "truncation_floor",
        "epochs",
    ];
    write_file(&out.join("recover.csv"), &table_to_csv(&header, &rows)?)?;
    Ok(lines)
}

/// Index counts for each configured γ×, in order.
pub fn table2_counts(dim: usize, order: usize, gammas: &[Option<f64>]) -> Result<Vec<usize>, CliError> {
    gammas
        .iter()
        .map(|g| {
            let h = g.map_or(Hyperbolicity::Full, Hyperbolicity::Gamma);
            Ok(hyperbolic_index_set(dim, order, h)?.len())
        })
        .collect()
}

fn run_table2(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let t = &cfg.table2;
    let counts = table2_counts(t.dim, t.order, &t.gammas)?;
    let rows: Vec<Vec<String>> = t
        .gammas
        .iter()
        .zip(&counts)
        .map(|(g, c)| vec![g.map_or("-inf".into(), |g| g.to_string()), c.to_string()])
        .collect();
    write_file(&out.join("table2.csv"), &table_to_csv(&["gamma", "count"], &rows)?)?;
    let list: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    Ok(vec![format!("table2 d={} N={} counts={}", t.dim, t.order, list.join("/"))])
}

/// Least-squares slope of log(error) against log(dt).
pub fn log_slope(dts: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn run_cn(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let p = cfg.problem_for(Command::Cn)?;
    let disc = cfg.discretization(&p);
    let dts = &cfg.cn.dts;
    let results = sweep(dts.len(), |i| {
        let res = cn_solve(&p, &disc, dts[i], cfg.stepping.t_end, &cfg.adaptive)?;
        emit_records(&res.records, out, &format!("cn_dt{i}"))?;
        Ok(res.records.last().and_then(|r| r.l2_error))
    })?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (dt, e) in dts.iter().zip(&results) {
        rows.push(vec![fmt_f64(*dt), e.map(fmt_f64).unwrap_or_default()]);
        lines.push(format!(
            "cn dt={dt} l2_error={}",
            e.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "n/a".into())
        ));
    }
    write_file(&out.join("cn.csv"), &table_to_csv(&["dt", "l2_error"], &rows)?)?;
    let errs: Option<Vec<f64>> = results.iter().copied().collect();
    if let (Some(errs), true) = (errs, dts.len() >= 2) {
        lines.push(format!("cn slope={:.3}", log_slope(dts, &errs)));
    }
    Ok(lines)
}

//! Command-line front end: experiment configuration, dispatch to the solver
//! and simulation layers, and persistence of results.
//!
//! Tabular results go to CSV (plot-ready, stable headers); every run also
//! writes a JSON record embedding the exact configuration snapshot that
//! produced it, the artifact version, and the wall-clock time, so any output
//! directory is self-describing. Schemas are strict: unknown fields are
//! rejected rather than silently ignored.
//!
//! Exit codes: 0 success, 2 usage/configuration errors, 3 numeric failures.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::rate::{phi_curves, RateOptions};
use crate::se::{phase_diagram, se_solve, FixedPointState, SeOptions};
use crate::sim::{
    gd_run, gen_data, hessian_spectrum, multi_init_experiment, uniform_sphere, GDConfig,
    INIT_STREAM,
};
use crate::spectral::spectral_edge;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ERM_LANDSCAPE_OUT";

const DEFAULT_ALPHA: f64 = 8.0;
const DEFAULT_SNR: f64 = 2.73;
const DEFAULT_KAPPA: f64 = 1.0;

/// Inclusive linear grid written `lo:hi:count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    /// Materialize the grid points.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.lo + step * i as f64).collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("grid spec `{s}` is not of the form lo:hi:count"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) || count == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid spec `{s}` needs finite lo <= hi and count >= 1"
            )));
        }
        Ok(GridSpec { lo, hi, count })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.count)
    }
}

/// Closed interval written `lo:hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for RangeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("range `{s}` is not of the form lo:hi"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!("range `{s}` needs finite lo < hi")));
        }
        Ok(RangeSpec { lo, hi })
    }
}

impl fmt::Display for RangeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

/// Problem coordinates shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemArgs {
    /// Oversampling ratio n/d.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Signal-to-noise ratio of the atomic noise law.
    #[arg(long, default_value_t = DEFAULT_SNR)]
    pub snr: f64,
    /// Saturating-loss cutoff; ignored with --quadratic.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Use the quadratic loss instead of the saturating one.
    #[arg(long, default_value_t = false)]
    pub quadratic: bool,
}

impl Default for ProblemArgs {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, snr: DEFAULT_SNR, kappa: DEFAULT_KAPPA, quadratic: false }
    }
}

impl ProblemArgs {
    fn loss(&self) -> Result<Loss> {
        if self.quadratic {
            Ok(Loss::quadratic())
        } else {
            Loss::tukey(self.kappa)
        }
    }

    fn problem(&self) -> Result<ProblemConfig> {
        ProblemConfig::new(self.alpha, self.snr, self.loss()?)
    }
}

/// Fixed-point solver numerics shared by the theory-side commands.
#[derive(Debug, Clone, Copy, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsArgs {
    /// Gauss–Hermite order for smooth expectations.
    #[arg(long, default_value_t = SeOptions::default().quad_order)]
    pub quad_order: usize,
    /// Damping of the fixed-point iteration.
    #[arg(long, default_value_t = SeOptions::default().damping)]
    pub damping: f64,
    /// Fixed-point convergence tolerance.
    #[arg(long, default_value_t = SeOptions::default().tol)]
    pub tol: f64,
    /// Fixed-point iteration budget.
    #[arg(long, default_value_t = SeOptions::default().t_max)]
    pub t_max: usize,
}

impl Default for NumericsArgs {
    fn default() -> Self {
        let o = SeOptions::default();
        Self { quad_order: o.quad_order, damping: o.damping, tol: o.tol, t_max: o.t_max }
    }
}

impl NumericsArgs {
    fn se_options(&self) -> SeOptions {
        SeOptions {
            damping: self.damping,
            tol: self.tol,
            t_max: self.t_max,
            quad_order: self.quad_order,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

fn cluster_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// Solve the scalar fixed point and report its diagnostics.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SolveFpArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub numerics: NumericsArgs,
}

/// Trace the stability threshold over an SNR grid.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseDiagramArgs {
    /// SNR grid, lo:hi:count.
    #[arg(long, default_value = "1:6:11")]
    pub snr_grid: GridSpec,
    /// Bisection bracket in alpha, lo:hi.
    #[arg(long, default_value = "2:10")]
    pub alpha_range: RangeSpec,
    /// Bisection width tolerance on the threshold.
    #[arg(long, default_value_t = 1e-3)]
    pub bisect_tol: f64,
    /// Saturating-loss cutoff.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    #[command(flatten)]
    pub numerics: NumericsArgs,
}

impl Default for PhaseDiagramArgs {
    fn default() -> Self {
        Self {
            snr_grid: GridSpec { lo: 1.0, hi: 6.0, count: 11 },
            alpha_range: RangeSpec { lo: 2.0, hi: 10.0 },
            bisect_tol: 1e-3,
            kappa: DEFAULT_KAPPA,
            numerics: NumericsArgs::default(),
        }
    }
}

/// Tabulate the complexity rate surface and its derived markers.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateFunctionArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Error-norm grid, lo:hi:count.
    #[arg(long, default_value = "0.1:1.3:7")]
    pub rho_grid: GridSpec,
    /// Loss-level grid, lo:hi:count.
    #[arg(long, default_value = "0.05:0.12:3")]
    pub iota_grid: GridSpec,
}

impl Default for RateFunctionArgs {
    fn default() -> Self {
        Self {
            problem: ProblemArgs::default(),
            rho_grid: GridSpec { lo: 0.1, hi: 1.3, count: 7 },
            iota_grid: GridSpec { lo: 0.05, hi: 0.12, count: 3 },
        }
    }
}

/// Descent protocol knobs shared by the experiment commands.
#[derive(Debug, Clone, Copy, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentArgs {
    /// Gradient-descent iteration cap.
    #[arg(long, default_value_t = GDConfig::default().max_iters)]
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = GDConfig::default().grad_tol)]
    pub grad_tol: f64,
}

impl Default for DescentArgs {
    fn default() -> Self {
        let c = GDConfig::default();
        Self { max_iters: c.max_iters, grad_tol: c.grad_tol }
    }
}

impl DescentArgs {
    fn gd_config(&self, seed: u64) -> GDConfig {
        GDConfig { max_iters: self.max_iters, grad_tol: self.grad_tol, seed, ..GDConfig::default() }
    }
}

/// Gradient-descent trials against the asymptotic predictions.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdExperimentArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Parameter dimension; the sample count is round(alpha * d).
    #[arg(long, default_value_t = 200)]
    pub d: usize,
    /// Data seeds, one trial per seed.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = default_seeds())]
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub descent: DescentArgs,
    #[command(flatten)]
    pub numerics: NumericsArgs,
}

impl Default for GdExperimentArgs {
    fn default() -> Self {
        Self {
            problem: ProblemArgs::default(),
            d: 200,
            seeds: default_seeds(),
            descent: DescentArgs::default(),
            numerics: NumericsArgs::default(),
        }
    }
}

/// Hessian spectra at descent minimizers.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianSpectrumArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Parameter dimension; the sample count is round(alpha * d).
    #[arg(long, default_value_t = 400)]
    pub d: usize,
    /// Number of trials (data seeds 0..trials).
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[command(flatten)]
    pub descent: DescentArgs,
    #[command(flatten)]
    pub numerics: NumericsArgs,
}

impl Default for HessianSpectrumArgs {
    fn default() -> Self {
        Self {
            problem: ProblemArgs::default(),
            d: 400,
            trials: 5,
            descent: DescentArgs::default(),
            numerics: NumericsArgs::default(),
        }
    }
}

/// Multi-initialization clustering of descent minimizers.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterExperimentArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Parameter dimension; the sample count is round(alpha * d).
    #[arg(long, default_value_t = 200)]
    pub d: usize,
    /// Initializations per dataset.
    #[arg(long, default_value_t = 10)]
    pub m_inits: usize,
    /// Data seeds, one experiment per seed.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = cluster_seeds())]
    #[serde(default = "cluster_seeds")]
    pub seeds: Vec<u64>,
    /// Normalized-distance threshold joining two minimizers.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[command(flatten)]
    pub descent: DescentArgs,
}

impl Default for ClusterExperimentArgs {
    fn default() -> Self {
        Self {
            problem: ProblemArgs::default(),
            d: 200,
            m_inits: 10,
            seeds: cluster_seeds(),
            threshold: 1e-3,
            descent: DescentArgs::default(),
        }
    }
}

/// The experiment being run, with all of its parameters.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the scalar fixed point and report its diagnostics as JSON.
    SolveFp(SolveFpArgs),
    /// Trace the stability threshold over an SNR grid (CSV `snr,alpha_tr`).
    PhaseDiagram(PhaseDiagramArgs),
    /// Tabulate the complexity rate surface and its markers (CSV + JSON).
    RateFunction(RateFunctionArgs),
    /// Run gradient-descent trials and compare with the asymptotic levels.
    GdExperiment(GdExperimentArgs),
    /// Compute Hessian spectra at descent minimizers.
    HessianSpectrum(HessianSpectrumArgs),
    /// Cluster descent minimizers from multiple initializations.
    ClusterExperiment(ClusterExperimentArgs),
}

impl Command {
    /// Kebab-case name; doubles as the output file stem.
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveFp(_) => "solve-fp",
            Command::PhaseDiagram(_) => "phase-diagram",
            Command::RateFunction(_) => "rate-function",
            Command::GdExperiment(_) => "gd-experiment",
            Command::HessianSpectrum(_) => "hessian-spectrum",
            Command::ClusterExperiment(_) => "cluster-experiment",
        }
    }
}

/// Full reproducible description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Directory the artifacts are written to.
    pub output_dir: String,
}

/// JSON record written next to every tabular artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// Crate version that produced the artifact.
    pub artifact_version: String,
    /// Exact configuration snapshot.
    pub config: ExperimentConfig,
    /// Wall-clock seconds for the run.
    pub wall_secs: f64,
    /// Scalar results and aggregates.
    pub results: serde_json::Value,
}

/// Top-level argument parser.
#[derive(Debug, Parser)]
#[command(
    name = "erm-landscape",
    version,
    about = "Asymptotics and experiments for robust M-estimation landscapes",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for independent grid cells and seeds (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory (falls back to $ERM_LANDSCAPE_OUT, then `.`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    /// Resolve the output directory from the flag, the environment, or `.`.
    pub fn output_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Run the selected command; returns the files written (JSON record last).
    pub fn execute(&self) -> Result<Vec<PathBuf>> {
        if self.jobs > 0 {
            // A second initialization in the same process is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build_global();
        }
        run(&ExperimentConfig {
            command: self.command.clone(),
            output_dir: self.output_dir().to_string_lossy().into_owned(),
        })
    }
}

/// Dispatch a configuration: compute, then persist CSV + JSON artifacts.
pub fn run(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let (results, csv) = match &config.command {
        Command::SolveFp(args) => (run_solve_fp(args)?, None),
        Command::PhaseDiagram(args) => run_phase_diagram(args)?,
        Command::RateFunction(args) => run_rate_function(args)?,
        Command::GdExperiment(args) => run_gd_experiment(args)?,
        Command::HessianSpectrum(args) => run_hessian_spectrum(args)?,
        Command::ClusterExperiment(args) => run_cluster_experiment(args)?,
    };
    let record = RunRecord {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        wall_secs: started.elapsed().as_secs_f64(),
        results,
    };
    let dir = Path::new(&config.output_dir);
    fs::create_dir_all(dir)?;
    let stem = config.command.name();
    let mut written = Vec::new();
    if let Some(csv) = csv {
        let path = dir.join(format!("{stem}.csv"));
        fs::write(&path, csv)?;
        written.push(path);
    }
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&record)?)?;
    written.push(json_path);
    Ok(written)
}

fn run_solve_fp(args: &SolveFpArgs) -> Result<serde_json::Value> {
    let cfg = args.problem.problem()?;
    let opts = args.numerics.se_options();
    let sol = se_solve(&cfg, FixedPointState::default_for(&cfg.loss), &opts)?;
    let (g_star, iota_star) = sol.risk_levels(&cfg.loss);
    let zeta_min = spectral_edge(&sol.nu_star).map(|e| e.zeta_min).ok();
    Ok(json!({
        "rho_star": sol.state.rho,
        "s_star": sol.state.s,
        "e3": sol.e3,
        "stable": sol.stable,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "g_star": g_star,
        "iota_star": iota_star,
        "zeta_min": zeta_min,
        "ibp_residual": sol.ibp_residual,
    }))
}

fn run_phase_diagram(args: &PhaseDiagramArgs) -> Result<(serde_json::Value, Option<String>)> {
    let loss = Loss::tukey(args.kappa)?;
    let snr_grid = args.snr_grid.values();
    let boundary = phase_diagram(
        &snr_grid,
        &loss,
        args.alpha_range.lo,
        args.alpha_range.hi,
        args.bisect_tol,
        &args.numerics.se_options(),
    )?;
    let mut csv = String::from("snr,alpha_tr\n");
    for (snr, alpha) in boundary.snr_grid.iter().zip(&boundary.alpha_tr) {
        match alpha {
            Some(a) => csv.push_str(&format!("{snr},{a}\n")),
            None => csv.push_str(&format!("{snr},\n")),
        }
    }
    let results = json!({
        "snr_grid": boundary.snr_grid,
        "alpha_tr": boundary.alpha_tr,
    });
    Ok((results, Some(csv)))
}

fn run_rate_function(args: &RateFunctionArgs) -> Result<(serde_json::Value, Option<String>)> {
    let cfg = args.problem.problem()?;
    let surface = phi_curves(
        &cfg,
        &args.rho_grid.values(),
        &args.iota_grid.values(),
        &RateOptions::default(),
    )?;
    let mut csv = String::from("rho,iota,phi\n");
    for (i, rho) in surface.rho_grid.iter().enumerate() {
        for (j, iota) in surface.iota_grid.iter().enumerate() {
            csv.push_str(&format!("{rho},{iota},{}\n", surface.phi[i][j]));
        }
    }
    let results = json!({
        "iota0": surface.iota0,
        "rho_star": surface.rho_star,
        "rho_grid": surface.rho_grid,
        "phi_inf": surface.phi_inf(),
        "phi_zero": surface.phi_zero(),
    });
    Ok((results, Some(csv)))
}

/// Sample count for a dimension at the configured oversampling ratio.
fn sample_count(alpha: f64, d: usize) -> Result<usize> {
    let n = (alpha * d as f64).round();
    if !(n >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha * d = {n} must be at least 1 (alpha={alpha}, d={d})"
        )));
    }
    Ok(n as usize)
}

fn run_gd_experiment(args: &GdExperimentArgs) -> Result<(serde_json::Value, Option<String>)> {
    let cfg = args.problem.problem()?;
    let n = sample_count(cfg.alpha, args.d)?;
    if args.seeds.is_empty() {
        return Err(Error::InvalidParameter("gd-experiment needs at least one seed".into()));
    }
    let trials: Vec<(u64, crate::sim::GDResult)> = args
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let data = gen_data(n, args.d, &cfg, seed)?;
            let gd_cfg = args.descent.gd_config(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
            let init = uniform_sphere(args.d, &mut rng);
            Ok((seed, gd_run(&data, &cfg.loss, &gd_cfg, &init)))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("seed,iterations,final_grad_norm,train_loss,est_error,stalled\n");
    for (seed, r) in &trials {
        csv.push_str(&format!(
            "{seed},{},{},{},{},{}\n",
            r.iterations, r.final_grad_norm, r.train_loss, r.est_error, r.stalled
        ));
    }
    let m = trials.len() as f64;
    let mean_err = trials.iter().map(|(_, r)| r.est_error).sum::<f64>() / m;
    let mean_loss = trials.iter().map(|(_, r)| r.train_loss).sum::<f64>() / m;
    // Asymptotic reference levels, when a stable fixed point exists.
    let theory = se_solve(&cfg, FixedPointState::default_for(&cfg.loss), &args.numerics.se_options())
        .ok()
        .filter(|fp| fp.stable)
        .map(|fp| {
            let (_, iota_star) = fp.risk_levels(&cfg.loss);
            (fp.state.rho, iota_star)
        });
    let results = json!({
        "mean_est_error": mean_err,
        "mean_train_loss": mean_loss,
        "rho_star": theory.map(|t| t.0),
        "iota_star": theory.map(|t| t.1),
        "rel_dev_est_error": theory.map(|t| (mean_err - t.0).abs() / t.0),
        "rel_dev_train_loss": theory.map(|t| (mean_loss - t.1).abs() / t.1),
        "trials": trials.len(),
    });
    Ok((results, Some(csv)))
}

fn run_hessian_spectrum(args: &HessianSpectrumArgs) -> Result<(serde_json::Value, Option<String>)> {
    let cfg = args.problem.problem()?;
    let n = sample_count(cfg.alpha, args.d)?;
    if args.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let spectra: Vec<(u64, f64, f64)> = (0..args.trials as u64)
        .into_par_iter()
        .map(|seed| -> Result<_> {
            let data = gen_data(n, args.d, &cfg, seed)?;
            let gd_cfg = args.descent.gd_config(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
            let init = uniform_sphere(args.d, &mut rng);
            let out = gd_run(&data, &cfg.loss, &gd_cfg, &init);
            let eigs = hessian_spectrum(&data, &cfg.loss, &out.theta_hat);
            Ok((seed, eigs[0], *eigs.last().unwrap()))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("trial,min_eig,max_eig\n");
    for (seed, lo, hi) in &spectra {
        csv.push_str(&format!("{seed},{lo},{hi}\n"));
    }
    let mean_min = spectra.iter().map(|s| s.1).sum::<f64>() / spectra.len() as f64;
    let zeta_min = se_solve(&cfg, FixedPointState::default_for(&cfg.loss), &args.numerics.se_options())
        .ok()
        .filter(|fp| fp.stable)
        .and_then(|fp| spectral_edge(&fp.nu_star).ok())
        .map(|e| e.zeta_min);
    let results = json!({
        "mean_min_eig": mean_min,
        "zeta_min": zeta_min,
        "rel_dev_min_eig": zeta_min.map(|z| (mean_min - z).abs() / z),
        "trials": args.trials,
    });
    Ok((results, Some(csv)))
}

fn run_cluster_experiment(args: &ClusterExperimentArgs) -> Result<(serde_json::Value, Option<String>)> {
    let cfg = args.problem.problem()?;
    let n = sample_count(cfg.alpha, args.d)?;
    if args.seeds.is_empty() {
        return Err(Error::InvalidParameter("cluster-experiment needs at least one seed".into()));
    }
    let reports: Vec<(u64, crate::sim::ClusterReport)> = args
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let data = gen_data(n, args.d, &cfg, seed)?;
            let gd_cfg = args.descent.gd_config(seed ^ INIT_STREAM);
            let report =
                multi_init_experiment(&data, &cfg.loss, &gd_cfg, args.m_inits, args.threshold)?;
            Ok((seed, report))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("seed,n_clusters,max_pair_dist\n");
    for (seed, r) in &reports {
        csv.push_str(&format!("{seed},{},{}\n", r.n_clusters, r.max_pair_dist));
    }
    let m = reports.len() as f64;
    let single = reports.iter().filter(|(_, r)| r.n_clusters == 1).count() as f64 / m;
    let results = json!({
        "single_cluster_frac": single,
        "multi_cluster_frac": 1.0 - single,
        "m_inits": args.m_inits,
        "seeds": reports.len(),
    });
    Ok((results, Some(csv)))
}

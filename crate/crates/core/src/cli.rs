//! Command-line front end: simulation, calibration, evaluation and Monte Carlo
//! sweeps. Every command is deterministic given its inputs and seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench_ellipsoid::ellipsoid_fit;
use crate::calmodel::{CalibrationState, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::eval::{evaluate, heading_errors, mag_field_std};
use crate::io::{
    read_dataset, read_json, write_dataset, write_heading_csv, write_json, ReportDocument, ResultDocument,
    SummaryCell, SummaryDocument, TruthDocument, SCHEMA_VERSION,
};
use crate::preprocess::{preprocess, DerivativeScheme, PreprocessConfig};
use crate::sim::{monte_carlo_run, Dataset, MotionKind, SimulationTruth, EVALUATION_KIND};
use crate::solver::{build_graph, optimize_batch, optimize_incremental, CalibrationResult, NoiseModel, SolverConfig};

/// Environment variable holding the default Monte Carlo worker count.
pub const WORKERS_ENV: &str = "MAGYC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// No correction; the uncalibrated baseline.
    Raw,
    MagycBfg,
    MagycIfg,
    Ellipsoid,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::MagycBfg => "magyc-bfg",
            Method::MagycIfg => "magyc-ifg",
            Method::Ellipsoid => "ellipsoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Wam,
    Mam,
    Lam,
}

impl From<KindArg> for MotionKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Wam => MotionKind::Wam,
            KindArg::Mam => MotionKind::Mam,
            KindArg::Lam => MotionKind::Lam,
        }
    }
}

/// Everything a calibration run needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    /// `None` picks a one-second window from the nominal sample rate.
    pub preprocess: Option<PreprocessConfig>,
    pub solver: SolverConfig,
    pub noise: NoiseModel,
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        RunConfig {
            method,
            preprocess: None,
            solver: SolverConfig::default(),
            noise: NoiseModel::default(),
        }
    }

    pub fn with_method(&self, method: Method) -> Self {
        RunConfig { method, ..*self }
    }

    fn preprocess_for(&self, d: &Dataset) -> Result<PreprocessConfig> {
        match self.preprocess {
            Some(p) => Ok(p),
            None => d
                .nominal_rate_hz()
                .map(PreprocessConfig::for_rate)
                .ok_or_else(|| Error::InvalidConfig("cannot infer the sample rate; pass --window".into())),
        }
    }
}

fn fixed_result(state: CalibrationState, soft_iron: Mat3, cost: f64) -> CalibrationResult {
    CalibrationResult {
        soft_iron,
        hard_iron: soft_iron * state.m_b,
        gyro_bias: state.w_b,
        state,
        state_history: Vec::new(),
        final_cost: cost,
        converged: true,
        iterations: 0,
    }
}

/// Runs the configured method on a raw dataset.
pub fn calibrate(d: &Dataset, cfg: &RunConfig) -> Result<ResultDocument> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut notes = Vec::new();
    let result = match cfg.method {
        Method::Raw => fixed_result(CalibrationState::identity(), Mat3::identity(), 0.0),
        Method::MagycBfg | Method::MagycIfg => {
            let samples = preprocess(&d.samples, &cfg.preprocess_for(d)?)?;
            if cfg.method == Method::MagycBfg {
                let graph = build_graph(&samples, &cfg.noise, &cfg.solver)?;
                optimize_batch(&graph, CalibrationState::identity(), &cfg.solver)?
            } else {
                optimize_incremental(&samples, &cfg.noise, &cfg.solver)?
            }
        }
        Method::Ellipsoid => {
            let mags: Vec<Vec3> = d.samples.iter().map(|s| s.m).collect();
            let fit = ellipsoid_fit(&mags)?;
            notes.push("scale fixed so the mean corrected magnitude equals the mean raw magnitude".into());
            notes.push("magnetometer only: gyroscope bias is not estimated".into());
            fixed_result(fit.to_state()?, fit.soft_iron, fit.algebraic_residual)
        }
    };
    Ok(ResultDocument {
        schema_version: SCHEMA_VERSION,
        method: cfg.method.label().into(),
        result,
        notes,
    })
}

/// Runs `methods` on every kind for `runs` replicates and averages the
/// metrics on each run's evaluation dataset. Failed cells count as failures
/// and never abort the sweep.
pub fn montecarlo_summary(
    kinds: &[MotionKind],
    methods: &[Method],
    runs: usize,
    seed: u64,
    truth: &SimulationTruth,
    cfg: &RunConfig,
) -> Result<SummaryDocument> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    if kinds.is_empty() || methods.is_empty() {
        return Err(Error::InvalidConfig("need at least one kind and one method".into()));
    }
    let decl = truth.declination();
    let per_run = (0..runs)
        .into_par_iter()
        .map(|run| {
            let data = monte_carlo_run(kinds, truth, run, seed)?;
            let ev = &data.evaluation;
            let raw = CalibrationState::identity();
            let raw_metrics = (heading_errors(ev, &raw, decl)?.rmse_deg, mag_field_std(ev, &raw)?);
            let jobs: Vec<(usize, Method)> = (0..kinds.len())
                .flat_map(|k| methods.iter().map(move |&m| (k, m)))
                .collect();
            let cells: Vec<Result<(f64, f64)>> = jobs
                .par_iter()
                .map(|&(k, m)| {
                    let x = calibrate(&data.calibration[k].1, &cfg.with_method(m))?.result.state;
                    Ok((heading_errors(ev, &x, decl)?.rmse_deg, mag_field_std(ev, &x)?))
                })
                .collect();
            Ok((raw_metrics, jobs, cells))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = runs as f64;
    let raw_heading_rmse = per_run.iter().map(|r| r.0 .0).sum::<f64>() / n;
    let raw_mag_field_std = per_run.iter().map(|r| r.0 .1).sum::<f64>() / n;
    let mut cells = Vec::new();
    for &m in methods {
        for (k, &kind) in kinds.iter().enumerate() {
            let (mut h, mut s, mut ok) = (0.0, 0.0, 0usize);
            let mut failure_kinds = Vec::new();
            for (_, jobs, results) in &per_run {
                let j = jobs.iter().position(|&job| job == (k, m)).expect("job present");
                match &results[j] {
                    Ok((hr, fs)) => {
                        h += hr;
                        s += fs;
                        ok += 1;
                    }
                    Err(e) => failure_kinds.push(e.kind().to_string()),
                }
            }
            failure_kinds.sort();
            cells.push(SummaryCell {
                method: m.label().into(),
                kind,
                heading_rmse: (ok > 0).then(|| h / ok as f64),
                mag_field_std: (ok > 0).then(|| s / ok as f64),
                successes: ok,
                failures: failure_kinds.len(),
                failure_kinds,
            });
        }
    }
    Ok(SummaryDocument {
        schema_version: SCHEMA_VERSION,
        runs,
        seed,
        evaluation_kind: EVALUATION_KIND,
        raw_heading_rmse,
        raw_mag_field_std,
        cells,
    })
}

/// Text table of heading RMSE (deg) / field std (mG) per method and kind.
pub fn format_summary(s: &SummaryDocument) -> String {
    let mut kinds: Vec<MotionKind> = s.cells.iter().map(|c| c.kind).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = format!("{:<12}", "method");
    for k in &kinds {
        let _ = write!(out, "{:>24}", k.to_string());
    }
    out.push('\n');
    let _ = write!(out, "{:<12}", "raw");
    for _ in &kinds {
        let _ = write!(out, "{:>24}", format!("{:.3} / {:.3}", s.raw_heading_rmse, s.raw_mag_field_std));
    }
    out.push('\n');
    let mut methods: Vec<&str> = Vec::new();
    for c in &s.cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    for m in methods {
        let _ = write!(out, "{m:<12}");
        for k in &kinds {
            let cell = s.cells.iter().find(|c| c.method == m && c.kind == *k);
            let text = match cell {
                Some(SummaryCell {
                    heading_rmse: Some(h),
                    mag_field_std: Some(f),
                    failures,
                    ..
                }) if *failures == 0 => format!("{h:.3} / {f:.3}"),
                Some(SummaryCell {
                    heading_rmse: Some(h),
                    mag_field_std: Some(f),
                    failures,
                    ..
                }) => format!("{h:.3} / {f:.3} ({failures} N/A)"),
                _ => "N/A".into(),
            };
            let _ = write!(out, "{text:>24}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Parser)]
#[command(name = "magyc", version, about = "Joint magnetometer and gyroscope calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated calibration and evaluation datasets with truth sidecars.
    Simulate(SimulateArgs),
    /// Calibrate from a dataset CSV and write a result JSON.
    Calibrate(CalibrateArgs),
    /// Evaluate a result on a dataset with attitude ground truth.
    Evaluate(EvaluateArgs),
    /// Monte Carlo comparison of methods across motion kinds.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Disable magnetometer and gyroscope noise.
    #[arg(long)]
    pub noise_free: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Averaging window in samples; defaults to one second of data.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum, default_value = "central")]
    pub derivative: DerivativeArg,
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().rel_tol)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().abs_tol)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().incremental_max_iters)]
    pub incremental_max_iters: usize,
    /// Residual variance per axis, (mG/s)².
    #[arg(long, default_value_t = 0.001)]
    pub sigma_residual: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    pub norm_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DerivativeArg {
    Central,
    Forward,
}

impl SolverArgs {
    pub fn run_config(&self, method: Method) -> Result<RunConfig> {
        let preprocess = self.window.map(|w| PreprocessConfig {
            window: w,
            derivative_scheme: match self.derivative {
                DerivativeArg::Central => DerivativeScheme::Central,
                DerivativeArg::Forward => DerivativeScheme::Forward,
            },
        });
        let mut cfg = RunConfig {
            method,
            preprocess,
            solver: SolverConfig {
                rel_tol: self.rel_tol,
                abs_tol: self.abs_tol,
                max_iters: self.max_iters,
                incremental_max_iters: self.incremental_max_iters,
                norm_target: self.norm_target,
                ..SolverConfig::default()
            },
            noise: NoiseModel {
                sigma_residual: Mat3::identity() * self.sigma_residual,
                sigma_norm: self.sigma_norm,
            },
        };
        if cfg.preprocess.is_none() && self.derivative == DerivativeArg::Forward {
            return Err(Error::InvalidConfig("--derivative forward requires --window".into()));
        }
        cfg.solver.validate()?;
        cfg.noise.residual_sqrt_information()?;
        cfg.noise.norm_sqrt_information()?;
        if let Some(p) = &mut cfg.preprocess {
            if p.window == 0 {
                return Err(Error::InvalidConfig("averaging window must be >= 1".into()));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "magyc-bfg")]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Truth sidecar; enables parameter errors and supplies the declination.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Declination in degrees, east of north; overrides the truth field.
    #[arg(long, allow_hyphen_values = true)]
    pub declination: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sample heading errors as CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["wam", "mam", "lam"])]
    pub kinds: Vec<KindArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["magyc-bfg", "magyc-ifg", "ellipsoid"])]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Summary JSON path; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = WORKERS_ENV, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    ensure_dir(&a.out)?;
    let kind = MotionKind::from(a.kind);
    let mut truth = SimulationTruth::default();
    if a.noise_free {
        truth = truth.noise_free();
    }
    let tag = kind.to_string().to_lowercase();
    for run in 0..a.runs {
        let data = monte_carlo_run(&[kind], &truth, run, a.seed)?;
        write_dataset(&a.out.join(format!("run{run:03}_{tag}_calibration.csv")), &data.calibration[0].1)?;
        write_dataset(&a.out.join(format!("run{run:03}_evaluation.csv")), &data.evaluation)?;
        let doc = TruthDocument {
            schema_version: SCHEMA_VERSION,
            run,
            seed: a.seed,
            calibration_kind: kind,
            evaluation_kind: EVALUATION_KIND,
            pitch_clamped_from_deg: crate::sim::profile_for(kind, 0).pitch_clamped_from_deg,
            truth,
        };
        write_json(&a.out.join(format!("run{run:03}_truth.json")), &doc)?;
    }
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let cfg = a.solver.run_config(a.method)?;
    let d = read_dataset(&a.input)?;
    let doc = calibrate(&d, &cfg)?;
    write_json(&a.out, &doc)?;
    if !doc.result.converged {
        return Err(Error::NumericalFailure(format!(
            "optimizer did not converge after {} iterations",
            doc.result.iterations
        )));
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let result: ResultDocument = read_json(&a.result)?;
    let truth: Option<TruthDocument> = a.truth.as_deref().map(read_json).transpose()?;
    let mut d = read_dataset(&a.data)?;
    d.truth = truth.as_ref().map(|t| t.truth);
    let declination = match (a.declination, &truth) {
        (Some(deg), _) => deg.to_radians(),
        (None, Some(t)) => t.truth.declination(),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "declination unknown: pass --declination or --truth".into(),
            ))
        }
    };
    let label = a
        .data
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    let (report, heading) = evaluate(
        &d,
        &result.result.state,
        declination,
        d.truth.as_ref(),
        &result.method,
        &label,
    )?;
    write_json(
        &a.out,
        &ReportDocument {
            schema_version: SCHEMA_VERSION,
            declination_deg: declination.to_degrees(),
            report,
        },
    )?;
    if let Some(p) = &a.plot {
        write_heading_csv(std::io::BufWriter::new(std::fs::File::create(p)?), &heading)?;
    }
    Ok(())
}

fn montecarlo_cmd(a: &MonteCarloArgs) -> Result<()> {
    let cfg = a.solver.run_config(Method::MagycBfg)?;
    let kinds: Vec<MotionKind> = a.kinds.iter().map(|&k| k.into()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let summary = pool.install(|| montecarlo_summary(&kinds, &a.methods, a.runs, a.seed, &SimulationTruth::default(), &cfg))?;
    print!("{}", format_summary(&summary));
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Montecarlo(a) => montecarlo_cmd(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to stderr as one JSON object with `error` (kind) and `message`.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}

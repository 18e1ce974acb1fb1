//! The `stochsep` command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{check_path, compute_constants, fit_tail, verify_martingale_tails, PathwiseReport};
use crate::config::Config;
use crate::ensemble::{deterministic_layer, epsilon_sweep, run_ensemble, EnsembleRun, PATHWISE_SLACK};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::Keyed;
use crate::solver::{run_path_with, PathRecord, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STOCHSEP_OUT_DIR";

/// Fraction of paths that must satisfy each pathwise inequality.
pub const PATHWISE_PASS: f64 = 0.95;

#[derive(Debug, Parser)]
#[command(name = "stochsep", version, about = "Separation layer experiments for the stochastic p-Laplace Allen-Cahn equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Overrides ensemble.base_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $STOCHSEP_OUT_DIR, else ./stochsep-out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run paths on the calling thread only
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One trajectory: monitors, snapshots and pathwise checks
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        path_id: u64,
        /// Steps between field snapshots
        #[arg(long, default_value_t = 250)]
        snapshot_stride: usize,
    },
    /// Monte Carlo ensemble of Λ with tail and pathwise diagnostics
    Ensemble {
        #[command(flatten)]
        common: Common,
    },
    /// One ensemble per entry of ensemble.epsilon_grid
    EpsSweep {
        #[command(flatten)]
        common: Common,
        /// Run even if the wells lie outside [-(1 - delta0), 1 - delta0]
        #[arg(long)]
        allow_outside: bool,
    },
    /// Every constant of the tail estimate as JSON
    Constants {
        #[command(flatten)]
        common: Common,
    },
    /// One trajectory checked against the pathwise inequalities
    VerifyPath {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        path_id: u64,
    },
    /// Regress ln P̂{Λ <= δ} on δ^{-ρ} for a lambda_samples.csv
    FitTail {
        #[command(flatten)]
        common: Common,
        /// Samples file (default: lambda_samples.csv in the output directory)
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common, .. }
            | Command::Ensemble { common }
            | Command::EpsSweep { common, .. }
            | Command::Constants { common }
            | Command::VerifyPath { common, .. }
            | Command::FitTail { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Ensemble { .. } => "ensemble",
            Command::EpsSweep { .. } => "eps-sweep",
            Command::Constants { .. } => "constants",
            Command::VerifyPath { .. } => "verify-path",
            Command::FitTail { .. } => "fit-tail",
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Unix seconds; honours `SOURCE_DATE_EPOCH` so manifests can be reproduced.
fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_digest: String,
    seed: u64,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }
}

fn paths_csv(records: &[PathRecord]) -> String {
    let mut s = String::from(
        "path_id,seed,epsilon,lambda_layer,sup_trajectory,separation_violated,final_g,final_vp,max_m1,max_m2,qv1,qv2,dissipation\n",
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.path_id,
            r.seed,
            r.epsilon,
            r.lambda_layer,
            r.sup_trajectory,
            r.separation_violated,
            r.final_g(),
            r.final_vp(),
            r.max_m1(),
            r.max_m2(),
            r.qv1,
            r.qv2,
            r.dissipation
        );
    }
    s
}

fn lambda_csv<'a>(records: impl IntoIterator<Item = &'a PathRecord>) -> String {
    let mut s = String::from("path_id,seed,epsilon,lambda_layer,sup_trajectory\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.path_id, r.seed, r.epsilon, r.lambda_layer, r.sup_trajectory);
    }
    s
}

fn snapshots_csv(rec: &PathRecord, nodes: &[f64]) -> String {
    let mut s = String::from("t,x,u\n");
    for (t, field) in &rec.snapshots {
        for (x, u) in nodes.iter().zip(field.iter()) {
            let _ = writeln!(s, "{t},{x},{u}");
        }
    }
    s
}

fn read_lambda_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read samples {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config("samples file is empty"))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == "lambda_layer")
        .ok_or_else(|| Error::config("samples file has no lambda_layer column"))?;
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::config(format!("malformed samples row: {l}")))
        })
        .collect()
}

fn exec_for(common: &Common) -> Execution {
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn pathwise_ok(report: &Option<PathwiseReport>) -> bool {
    report.as_ref().is_none_or(|r| r.passes(PATHWISE_PASS))
}

fn ensemble_json(run: &EnsembleRun) -> serde_json::Value {
    json!({
        "summary": run.summary,
    })
}

/// Executes the subcommand; `Ok(false)` means a verification failed.
fn execute(cmd: &Command, cfg: &mut Config, out: &mut Outputs) -> Result<bool> {
    let common = cmd.common();
    if let Some(seed) = common.seed {
        cfg.ensemble.base_seed = seed;
    }
    let problem = cfg.problem()?;
    let alpha = cfg.alpha();
    let exec = exec_for(common);
    let seed = cfg.ensemble.base_seed;
    match cmd {
        Command::Constants { .. } => {
            let chain = compute_constants(&problem, alpha)?;
            let noise = problem.noise.noise_constants(&problem.potential)?;
            out.json("summary.json", &json!({ "constants": chain, "noise": noise }))?;
            println!("rho = {}  L = {:e}  delta_star = {:e}", chain.rho, chain.l, chain.delta_star);
            Ok(true)
        }
        Command::Solve { .. } | Command::VerifyPath { .. } => {
            let (path_id, stride) = match cmd {
                Command::Solve { path_id, snapshot_stride, .. } => (path_id, *snapshot_stride),
                Command::VerifyPath { path_id, .. } => (path_id, 0),
                _ => unreachable!(),
            };
            let chain = compute_constants(&problem, alpha)?;
            let rec = run_path_with(
                &problem,
                &problem.u0,
                &Keyed { seed, path_id: *path_id },
                seed,
                *path_id,
                RunOptions { snapshot_stride: stride },
            )?;
            let checks = check_path(&rec, &chain, PATHWISE_SLACK);
            out.write("paths.csv", &paths_csv(std::slice::from_ref(&rec)))?;
            if stride > 0 {
                let nodes: Vec<f64> = problem.mesh.nodes().collect();
                out.write("snapshots.csv", &snapshots_csv(&rec, &nodes))?;
            }
            let ok = !rec.separation_violated && checks.g_bound && checks.vp_bound && checks.qv1 && checks.qv2;
            out.json(
                "summary.json",
                &json!({
                    "path_id": rec.path_id,
                    "seed": rec.seed,
                    "epsilon": rec.epsilon,
                    "lambda_layer": rec.lambda_layer,
                    "sup_trajectory": rec.sup_trajectory,
                    "separation_violated": rec.separation_violated,
                    "steps_completed": rec.steps_completed,
                    "max_newton_iterations": rec.max_newton_iterations,
                    "final_g": rec.final_g(),
                    "final_vp": rec.final_vp(),
                    "max_m1": rec.max_m1(),
                    "max_m2": rec.max_m2(),
                    "qv1": rec.qv1,
                    "qv2": rec.qv2,
                    "dissipation": rec.dissipation,
                    "checks": checks,
                    "constants": chain,
                }),
            )?;
            println!("lambda_layer = {}  sup = {}  checks = {:?}", rec.lambda_layer, rec.sup_trajectory, checks);
            Ok(match cmd {
                Command::VerifyPath { .. } => ok,
                _ => !rec.separation_violated,
            })
        }
        Command::Ensemble { .. } => {
            let chain = compute_constants(&problem, alpha)?;
            let run = run_ensemble(&problem, &cfg.ensemble, Some(&chain), exec)?;
            let tails = verify_martingale_tails(&run.records, &chain, problem.noise.epsilon, 20)?;
            let samples: Vec<f64> = run.records.iter().map(|r| r.lambda_layer).collect();
            let fit = fit_tail(&samples, &cfg.ensemble.delta_queries, chain.rho);
            out.write("lambda_samples.csv", &lambda_csv(&run.records))?;
            out.write("paths.csv", &paths_csv(&run.records))?;
            let mut summary = ensemble_json(&run);
            summary["martingale_tails"] = serde_json::to_value(&tails)?;
            summary["tail_fit"] = fit_value(&fit)?;
            summary["constants"] = serde_json::to_value(&chain)?;
            out.json("summary.json", &summary)?;
            let s = &run.summary;
            println!(
                "paths = {}  failed = {}  violations = {}  mean lambda = {} +- {}",
                s.n_paths, s.n_failed, s.n_separation_violations, s.lambda_mean, s.lambda_stderr
            );
            Ok(pathwise_ok(&s.pathwise) && s.n_separation_violations == 0)
        }
        Command::EpsSweep { allow_outside, .. } => {
            let chain = compute_constants(&problem, alpha)?;
            if !problem.wells_inside_initial_range() && *allow_outside {
                eprintln!(
                    "warning: max(|r_F|, |R_F|) = {} exceeds 1 - delta0 = {}; the vanishing-noise limit is not covered",
                    problem.stationary.max_abs(),
                    1.0 - problem.delta0
                );
            }
            let sweep = epsilon_sweep(&problem, &cfg.ensemble, Some(&chain), exec, *allow_outside)?;
            let (det_sup, det_ok) = deterministic_layer(&problem, 1e-6)?;
            out.write("lambda_samples.csv", &lambda_csv(sweep.entries.iter().flat_map(|e| e.records.iter())))?;
            let rate_table: Vec<_> = sweep
                .entries
                .iter()
                .flat_map(|e| {
                    e.summary.eta.iter().map(move |q| {
                        json!({
                            "epsilon": e.summary.epsilon,
                            "eta": q.eta,
                            "p_hat": q.p_hat,
                            "eps_ln_p": q.eps_ln_p,
                            "minus_rate": q.minus_rate,
                        })
                    })
                })
                .collect();
            out.json(
                "summary.json",
                &json!({
                    "hypothesis_satisfied": sweep.hypothesis_satisfied,
                    "deterministic_sup": det_sup,
                    "deterministic_within_threshold": det_ok,
                    "entries": sweep.entries.iter().map(|e| &e.summary).collect::<Vec<_>>(),
                    "checks": sweep.checks,
                    "rate_table": rate_table,
                    "constants": chain,
                }),
            )?;
            for e in &sweep.entries {
                println!("epsilon = {}  mean lambda = {} +- {}", e.summary.epsilon, e.summary.lambda_mean, e.summary.lambda_stderr);
            }
            Ok(sweep.entries.iter().all(|e| pathwise_ok(&e.summary.pathwise)))
        }
        Command::FitTail { samples, .. } => {
            let chain = compute_constants(&problem, alpha)?;
            let path = samples.clone().unwrap_or_else(|| out.dir.join("lambda_samples.csv"));
            let data = read_lambda_samples(&path)?;
            let fit = fit_tail(&data, &cfg.ensemble.delta_queries, chain.rho);
            out.json(
                "summary.json",
                &json!({
                    "n_samples": data.len(),
                    "rho": chain.rho,
                    "delta_queries": cfg.ensemble.delta_queries,
                    "tail_fit": fit_value(&fit)?,
                }),
            )?;
            match &fit {
                Ok(f) => println!("slope = {}  intercept = {}  r^2 = {}", f.slope, f.intercept, f.r_squared),
                Err(e) => println!("{e}"),
            }
            Ok(true)
        }
    }
}

/// A failed fit is a reportable outcome, not an error of the run.
fn fit_value(fit: &Result<crate::analysis::TailFit>) -> Result<serde_json::Value> {
    Ok(match fit {
        Ok(f) => serde_json::to_value(f)?,
        Err(e) => json!({ "insufficient_data": e.to_string() }),
    })
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started = timestamp();
    let common = cli.command.common();
    let mut cfg = match Config::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("stochsep-out"));
    let mut out = match Outputs::new(dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let verified = match execute(&cli.command, &mut cfg, &mut out) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name(),
        config_digest: match cfg.digest() {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        seed: cfg.ensemble.base_seed,
        started_unix: started,
        finished_unix: timestamp(),
        outputs: out.written.iter().cloned().chain(["manifest.json".to_string()]).collect(),
    };
    if let Err(e) = out.json("manifest.json", &manifest) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if verified {
        EXIT_OK
    } else {
        eprintln!("verification failed");
        EXIT_VERIFICATION
    }
}

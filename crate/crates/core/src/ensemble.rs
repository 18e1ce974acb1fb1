//! Monte Carlo over trajectories: empirical law of `Λ`, tail queries and the
//! vanishing-noise sweep.

use serde::{Deserialize, Serialize};

use crate::analysis::{check_path, rate_function, tail_bound, ConstantChain, PathChecks, PathwiseReport};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::Silent;
use crate::problem::Problem;
use crate::solver::{run_path, run_path_with, PathRecord, RunOptions};

/// Paths may fail individually; more than this fraction aborts the ensemble.
pub const FAILURE_THRESHOLD: f64 = 0.01;

/// Slack on `K₁`, `K₂`, `K₁'`, `K₂'` in the discrete pathwise checks.
pub const PATHWISE_SLACK: f64 = 1.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub delta_queries: Vec<f64>,
    #[serde(default)]
    pub eta_queries: Vec<f64>,
    #[serde(default)]
    pub epsilon_grid: Vec<f64>,
}

impl EnsembleConfig {
    pub fn validate(&self, delta0: f64) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::config("n_paths must be at least 1"));
        }
        for (name, qs) in [("delta_queries", &self.delta_queries), ("eta_queries", &self.eta_queries)] {
            if let Some(q) = qs.iter().find(|&&q| !(q > 0.0 && q < delta0)) {
                return Err(Error::config(format!("{name} entry {q} outside (0, delta0 = {delta0})")));
            }
        }
        if let Some(e) = self.epsilon_grid.iter().find(|&&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::config(format!("epsilon_grid entry {e} outside [0, 1]")));
        }
        if self.epsilon_grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config("epsilon_grid must be strictly descending"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdfPoint {
    pub delta: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub bound: f64,
    /// `δ < δ₊`
    pub bound_in_range: bool,
    /// The bound is out of range or below Monte Carlo resolution `1/M`, so
    /// the comparison carries no information.
    pub vacuous: bool,
    /// `vacuous || p_hat <= bound + 2 stderr`
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtaPoint {
    pub eta: f64,
    /// `P̂{|Λ_ε - δ₀| >= η}`
    pub p_hat: f64,
    pub stderr: f64,
    /// `ε ln P̂` when `P̂ > 0` and `ε > 0`
    pub eps_ln_p: Option<f64>,
    /// `-N(δ₀ - η)`
    pub minus_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub path_id: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub epsilon: f64,
    pub n_paths: usize,
    pub n_failed: usize,
    pub failures: Vec<Failure>,
    pub n_separation_violations: usize,
    pub lambda_mean: f64,
    pub lambda_stderr: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cdf: Vec<CdfPoint>,
    pub eta: Vec<EtaPoint>,
    pub pathwise: Option<PathwiseReport>,
}

impl EnsembleSummary {
    pub fn tail_consistent(&self) -> bool {
        self.cdf.iter().all(|c| c.consistent)
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub summary: EnsembleSummary,
    /// Compacted records of the successful paths, in path order.
    pub records: Vec<PathRecord>,
    pub checks: Vec<PathChecks>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn binomial(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n.max(1) as f64;
    (p, (p * (1.0 - p) / n.max(1) as f64).sqrt())
}

/// `n_paths` trajectories with ids `0..n_paths`, all keyed on `base_seed`.
/// With a chain, every path is also run through the pathwise checks.
pub fn run_ensemble(
    problem: &Problem,
    cfg: &EnsembleConfig,
    chain: Option<&ConstantChain>,
    exec: Execution,
) -> Result<EnsembleRun> {
    cfg.validate(problem.delta0)?;
    let ids: Vec<u64> = (0..cfg.n_paths as u64).collect();
    let outcomes = exec.map(&ids, |&path_id| {
        run_path(problem, cfg.base_seed, path_id).map(|rec| {
            let checks = chain.map(|c| check_path(&rec, c, PATHWISE_SLACK));
            (rec.compact(), checks)
        })
    });
    let mut records = Vec::with_capacity(ids.len());
    let mut checks = Vec::new();
    let mut failures = Vec::new();
    for (path_id, out) in ids.iter().zip(outcomes) {
        match out {
            Ok((rec, c)) => {
                records.push(rec);
                checks.extend(c);
            }
            Err(e) => failures.push(Failure { path_id: *path_id, error: e.to_string() }),
        }
    }
    if failures.len() as f64 > FAILURE_THRESHOLD * cfg.n_paths as f64 {
        return Err(Error::EnsembleAborted {
            failed: failures.len(),
            total: cfg.n_paths,
            first: failures[0].error.clone(),
        });
    }
    let summary = summarize(problem, cfg, chain, &records, &checks, failures);
    Ok(EnsembleRun { summary, records, checks })
}

fn summarize(
    problem: &Problem,
    cfg: &EnsembleConfig,
    chain: Option<&ConstantChain>,
    records: &[PathRecord],
    checks: &[PathChecks],
    failures: Vec<Failure>,
) -> EnsembleSummary {
    let samples: Vec<f64> = records.iter().map(|r| r.lambda_layer).collect();
    let m = samples.len();
    let (lambda_mean, lambda_stderr) = mean_stderr(&samples);
    let resolution = 1.0 / m.max(1) as f64;
    let cdf = cfg
        .delta_queries
        .iter()
        .map(|&delta| {
            let (p_hat, stderr) = binomial(samples.iter().filter(|&&s| s <= delta).count(), m);
            let tb = chain.map(|c| tail_bound(c, delta));
            let (bound, bound_in_range) = tb.map_or((1.0, false), |t| (t.value, t.in_range));
            let vacuous = !bound_in_range || bound < resolution;
            CdfPoint {
                delta,
                p_hat,
                stderr,
                bound,
                bound_in_range,
                vacuous,
                consistent: vacuous || p_hat <= bound + 2.0 * stderr,
            }
        })
        .collect();
    let eps = problem.noise.epsilon;
    let eta = cfg
        .eta_queries
        .iter()
        .map(|&eta| {
            let hits = samples.iter().filter(|&&s| (s - problem.delta0).abs() >= eta).count();
            let (p_hat, stderr) = binomial(hits, m);
            EtaPoint {
                eta,
                p_hat,
                stderr,
                eps_ln_p: (p_hat > 0.0 && eps > 0.0).then(|| eps * p_hat.ln()),
                minus_rate: chain.map_or(f64::NAN, |c| -rate_function(c, problem.delta0 - eta)),
            }
        })
        .collect();
    EnsembleSummary {
        epsilon: eps,
        n_paths: cfg.n_paths,
        n_failed: failures.len(),
        failures,
        n_separation_violations: records.iter().filter(|r| r.separation_violated).count(),
        lambda_mean,
        lambda_stderr,
        lambda_min: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        lambda_max: samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        cdf,
        eta,
        pathwise: (!checks.is_empty()).then(|| PathwiseReport::from_checks(checks)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepChecks {
    /// For each `η`: `P̂` non-increasing along the grid within 2 standard errors.
    pub tail_monotone: Vec<bool>,
    /// `mean Λ_ε` non-decreasing along the grid within 2 standard errors.
    pub mean_monotone: bool,
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub hypothesis_satisfied: bool,
    pub entries: Vec<EnsembleRun>,
    pub checks: SweepChecks,
}

/// One ensemble per `ε` in the (descending) grid, sharing increments across
/// `ε`. Requires `max{|r_F|, |R_F|} <= 1 - δ₀` unless `allow_outside` is set.
pub fn epsilon_sweep(
    problem: &Problem,
    cfg: &EnsembleConfig,
    chain: Option<&ConstantChain>,
    exec: Execution,
    allow_outside: bool,
) -> Result<SweepRun> {
    cfg.validate(problem.delta0)?;
    if cfg.epsilon_grid.is_empty() {
        return Err(Error::config("epsilon_grid is empty"));
    }
    let hypothesis_satisfied = problem.wells_inside_initial_range();
    if !hypothesis_satisfied && !allow_outside {
        return Err(Error::config(format!(
            "the sweep needs max(|r_F|, |R_F|) = {} <= 1 - delta0 = {}",
            problem.stationary.max_abs(),
            1.0 - problem.delta0
        )));
    }
    let entries = cfg
        .epsilon_grid
        .iter()
        .map(|&eps| run_ensemble(&problem.with_epsilon(eps)?, cfg, chain, exec))
        .collect::<Result<Vec<_>>>()?;
    let checks = sweep_checks(&entries.iter().map(|e| e.summary.clone()).collect::<Vec<_>>());
    Ok(SweepRun { hypothesis_satisfied, entries, checks })
}

pub fn sweep_checks(summaries: &[EnsembleSummary]) -> SweepChecks {
    let n_eta = summaries.first().map_or(0, |s| s.eta.len());
    let tail_monotone = (0..n_eta)
        .map(|q| {
            summaries.windows(2).all(|w| {
                let (a, b) = (&w[0].eta[q], &w[1].eta[q]);
                b.p_hat <= a.p_hat + 2.0 * a.stderr.hypot(b.stderr)
            })
        })
        .collect();
    let mean_monotone = summaries.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        b.lambda_mean >= a.lambda_mean - 2.0 * a.lambda_stderr.hypot(b.lambda_stderr)
    });
    SweepChecks { tail_monotone, mean_monotone }
}

/// The noise-free trajectory: `(sup_trajectory, sup <= 1 - δ₀ + tol)`.
pub fn deterministic_layer(problem: &Problem, tol: f64) -> Result<(f64, bool)> {
    let quiet = problem.with_epsilon(0.0)?;
    let rec = run_path_with(&quiet, &quiet.u0, &Silent, 0, 0, RunOptions::default())?;
    Ok((rec.sup_trajectory, rec.sup_trajectory <= 1.0 - problem.delta0 + tol))
}

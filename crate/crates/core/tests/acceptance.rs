//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! The heavy Monte Carlo runs (2000 paths at δ₀ = 0.5, a 4 x 500 path sweep
//! at δ₀ = 0.02) are computed once and shared between the criteria that read
//! them.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use stochsep::analysis::{compute_constants, fit_tail, k0, rho, ConstantChain, PathwiseReport};
use stochsep::ensemble::{deterministic_layer, epsilon_sweep, run_ensemble, EnsembleConfig, EnsembleRun};
use stochsep::exec::Execution;
use stochsep::grid::gamma_p;
use stochsep::noise::{Keyed, Negated};
use stochsep::solver::{lambda_convergence_study, run_path_with, RunOptions};
use stochsep::{Field, Mesh1D, NoiseSpec, PotentialSpec, Problem, SolverConfig};

const SEED: u64 = 20240601;
const THETA: f64 = 1.0;
const THETA0: f64 = 2.0;
const SIGMA: u32 = 3;
const ALPHA: f64 = 0.4;

fn default_problem(delta0: f64) -> Problem {
    let pot = PotentialSpec::logarithmic(THETA, THETA0).unwrap();
    let noise = NoiseSpec::power_family(SIGMA, 16, 1.0).unwrap();
    let mesh = Mesh1D::new(1.0, 128).unwrap();
    let cfg = SolverConfig::new(0.25, 1e-4, 1e-4, 2.0);
    Problem::new(pot, noise, mesh, cfg, delta0).unwrap()
}

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

// ---------------------------------------------------------------- shared runs

struct Shared {
    chain: ConstantChain,
    run: EnsembleRun,
}

fn shared_ensemble() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let pr = default_problem(0.5);
        let chain = compute_constants(&pr, ALPHA).unwrap();
        let cfg = EnsembleConfig {
            n_paths: 2000,
            base_seed: SEED,
            delta_queries: vec![0.05, 0.1, 0.2, 0.3],
            eta_queries: vec![0.1, 0.25],
            epsilon_grid: vec![],
        };
        let run = run_ensemble(&pr, &cfg, Some(&chain), Execution::default()).unwrap();
        Shared { chain, run }
    })
}

// ---------------------------------------------------------------- criteria

fn separation_witness() -> Outcome {
    let sh = shared_ensemble();
    let recs = &sh.run.records[..200.min(sh.run.records.len())];
    let positive = recs.iter().filter(|r| r.lambda_layer > 0.0).count();
    let inside = recs.iter().filter(|r| r.sup_trajectory < 1.0).count();
    let flags = recs.iter().filter(|r| r.separation_violated).count();
    let min = recs.iter().map(|r| r.lambda_layer).fold(f64::INFINITY, f64::min);
    let failed = sh.run.summary.failures.iter().filter(|f| f.path_id < 200).count();
    outcome(
        recs.len() == 200 && failed == 0 && positive == 200 && inside == 200 && flags == 0,
        format!("paths={} Λ>0: {positive} |u|<1: {inside} flags: {flags} min Λ = {min:.6}", recs.len()),
    )
}

fn deterministic_threshold() -> Outcome {
    let pr = default_problem(0.02);
    let (sup, ok) = deterministic_layer(&pr, 1e-6).unwrap();
    outcome(
        ok && pr.wells_inside_initial_range(),
        format!("sup = {sup:.12} vs 1 - δ₀ + 1e-6 = {:.12}, r* = {:.12}", 0.98 + 1e-6, pr.stationary.max_abs()),
    )
}

fn yosida_suite() -> Outcome {
    let pot = PotentialSpec::logarithmic(THETA, THETA0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_res, mut worst_nonexp, mut worst_bound, mut worst_comp) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..10_000 {
        let lambda = 10f64.powf(rng.random_range(-6.0..-1.0));
        let span = 1.0 + 5.0 * lambda;
        let r = rng.random_range(-span..span);
        let s = rng.random_range(-span..span);
        let y = pot.yosida(lambda, r).unwrap();
        let ys = pot.yosida(lambda, s).unwrap();
        worst_res = worst_res.max((y.j + lambda * pot.beta(y.j) - r).abs());
        worst_nonexp = worst_nonexp.max((y.j - ys.j).abs() - (r - s).abs());
        if r.abs() < 1.0 {
            worst_bound = worst_bound.max(y.beta.abs() - pot.beta(r).abs());
        }
        let b = pot.beta(y.j);
        worst_comp = worst_comp.max((y.beta - b).abs() / b.abs().max(1.0));
    }
    outcome(
        worst_res <= 1e-10 && worst_nonexp <= 1e-10 && worst_bound <= 1e-10 && worst_comp <= 1e-9,
        format!(
            "residual {worst_res:.2e}, non-expansivity excess {worst_nonexp:.2e}, |β_λ|-|β| {worst_bound:.2e}, β_λ vs β∘J {worst_comp:.2e}"
        ),
    )
}

fn lambda_rate() -> Outcome {
    let pr = default_problem(0.5);
    let ids: Vec<u64> = (0..20).collect();
    let study = lambda_convergence_study(&pr, 1e-2, 6, SEED, &ids, Execution::default()).unwrap();
    let lo = study.path_rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = study.path_rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        (0.5..=1.5).contains(&study.mean_rate) && study.path_rates.len() == 20,
        format!(
            "λ {:e} -> {:e}, mean log2 ratio = {:.4} (paths {lo:.3}..{hi:.3})",
            study.lambdas[0],
            study.lambdas[study.lambdas.len() - 1],
            study.mean_rate
        ),
    )
}

fn sign_flip() -> Outcome {
    let pr = default_problem(0.5);
    let tol = 10.0 * pr.solver.newton_tol;
    let opts = RunOptions { snapshot_stride: 1 };
    let neg_u0 = pr.u0.negated();
    let mut worst = 0.0_f64;
    let mut steps = 0;
    for path_id in 0..5 {
        let src = Keyed { seed: SEED, path_id };
        let a = run_path_with(&pr, &pr.u0, &src, SEED, path_id, opts).unwrap();
        let b = run_path_with(&pr, &neg_u0, &Negated(src), SEED, path_id, opts).unwrap();
        assert_eq!(a.snapshots.len(), b.snapshots.len());
        for ((_, ua), (_, ub)) in a.snapshots.iter().zip(&b.snapshots) {
            for (x, y) in ua.iter().zip(ub.iter()) {
                worst = worst.max((x + y).abs());
            }
        }
        steps = a.snapshots.len();
    }
    outcome(worst <= tol, format!("max |u + u⁻| = {worst:.2e} over 5 paths x {steps} records (tol {tol:.0e})"))
}

fn operator_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = Mesh1D::new(1.0, 64).unwrap();
    let h = mesh.spacing;
    let n = mesh.n_interior;
    let random_field = |rng: &mut ChaCha8Rng| -> Field {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>().into()
    };

    let mut worst_p2 = 0.0_f64;
    let mut worst_sbp = 0.0_f64;
    for _ in 0..50 {
        let u = random_field(&mut rng);
        let lap = mesh.p_laplacian(2.0, &u).unwrap();
        let at = |i: isize| if i < 0 || i >= n as isize { 0.0 } else { u[i as usize] };
        let scale = lap.sup_norm();
        for i in 0..n as isize {
            let fd = (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h);
            worst_p2 = worst_p2.max((lap[i as usize] - fd).abs() / scale);
        }
        for p in [2.0, 3.0, 4.0] {
            let v = random_field(&mut rng);
            let lap = mesh.p_laplacian(p, &u).unwrap();
            let lhs = -mesh.inner(&lap, &v);
            let gu = mesh.face_gradients(&u);
            let gv = mesh.face_gradients(&v);
            let terms: Vec<f64> = gu.iter().zip(&gv).map(|(a, b)| gamma_p(p, *a) * b * h).collect();
            let rhs: f64 = terms.iter().sum();
            let mag: f64 = terms.iter().map(|t| t.abs()).sum();
            worst_sbp = worst_sbp.max((lhs - rhs).abs() / mag);
        }
    }

    let mut worst_mono = f64::INFINITY;
    for p in [2.0, 3.0, 4.0] {
        for _ in 0..1000 {
            let u = random_field(&mut rng);
            let v = random_field(&mut rng);
            let lu = mesh.p_laplacian(p, &u).unwrap();
            let lv = mesh.p_laplacian(p, &v).unwrap();
            let diff: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
            let dl: Vec<f64> = lv.iter().zip(lu.iter()).map(|(a, b)| a - b).collect();
            worst_mono = worst_mono.min(mesh.inner(&dl, &diff));
        }
    }
    outcome(
        worst_p2 <= 1e-12 && worst_sbp <= 1e-13 && worst_mono >= 0.0,
        format!("p=2 rel err {worst_p2:.2e}, SBP rel err {worst_sbp:.2e}, min monotonicity pairing {worst_mono:.3e}"),
    )
}

fn pathwise_inequalities() -> Outcome {
    let sh = shared_ensemble();
    let checks = &sh.run.checks[..200.min(sh.run.checks.len())];
    let rep = PathwiseReport::from_checks(checks);
    outcome(
        rep.n_paths == 200 && rep.passes(0.95),
        format!(
            "G {:.3}, V_p {:.3}, [M1] {:.3}, [M2] {:.3} of {} paths",
            rep.g_fraction, rep.vp_fraction, rep.qv1_fraction, rep.qv2_fraction, rep.n_paths
        ),
    )
}

// Independent evaluation of the constant chain: closed forms where they exist,
// Leibniz-rule derivatives and golden-section refinement elsewhere.

fn falling(m: u32, a: u32) -> f64 {
    (0..a).map(|i| (m - i) as f64).product()
}

fn bump_derivative(m: u32, j: u32, r: f64) -> f64 {
    // d^j/dr^j [(1-r)^m (1+r)^m]
    let mut acc = 0.0;
    let mut binom = 1.0;
    for a in 0..=j {
        let b = j - a;
        if a <= m && b <= m {
            let left = if a % 2 == 0 { 1.0 } else { -1.0 } * falling(m, a) * (1.0 - r).powi((m - a) as i32);
            let right = falling(m, b) * (1.0 + r).powi((m - b) as i32);
            acc += binom * left * right;
        }
        binom = binom * (j - a) as f64 / (a + 1) as f64;
    }
    acc
}

fn max_abs_on(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const N: usize = 200_000;
    let step = (hi - lo) / N as f64;
    let mut best = (0.0, lo);
    for i in 0..=N {
        let x = lo + i as f64 * step;
        let v = f(x).abs();
        if v > best.0 {
            best = (v, x);
        }
    }
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c).abs() >= f(d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    best.0.max(f(0.5 * (a + b)).abs())
}

fn oracle_chain(delta0: f64) -> BTreeMap<String, Value> {
    let (theta, theta0, s) = (THETA, THETA0, SIGMA as f64);
    let (p, d, t, ell, n_modes, n_nodes) = (2.0_f64, 1.0_f64, 0.25_f64, 1.0_f64, 16usize, 128usize);
    let m = SIGMA + 3;
    let c_f = theta0 - theta;

    // wells: θ atanh r = θ₀ r on (0, 1)
    let mut r_star = 0.99_f64;
    for _ in 0..100 {
        let f = theta * r_star.atanh() - theta0 * r_star;
        let df = theta / (1.0 - r_star * r_star) - theta0;
        r_star -= f / df;
    }
    let r_c = (1.0 - theta / theta0).sqrt();
    let max_abs_df = (theta * r_c.atanh() - theta0 * r_c).abs();
    let max_abs_dg = 2.0 * s * r_star / (1.0 - r_star * r_star).powf(s + 1.0);

    let sups: Vec<f64> = (0..=SIGMA + 2).map(|j| max_abs_on(|r| bump_derivative(m, j, r), -1.0, 1.0)).collect();
    let w1 = sups[0] + sups[1];
    let ws: f64 = sups.iter().sum();
    let mm = 2 * m;
    let s_peak = theta * (mm - 1) as f64 / (mm as f64 * theta0);
    let lobe = if s_peak <= 1.0 {
        theta * s_peak.powi(mm as i32 - 1) - theta0 * s_peak.powi(mm as i32)
    } else {
        0.0
    };
    let f2 = (theta - theta0).abs().max(lobe.abs());
    let harmonic2: f64 = (1..=n_modes).map(|k| 1.0 / (k * k) as f64).sum();
    let c_h_sq = (w1 * w1 + f2) * harmonic2;
    let c_h_sigma_sq = ws * ws * harmonic2;
    let noise_tail_bound = ws * ws / n_modes as f64;

    let h = ell / (n_nodes as f64 + 1.0);
    let raw: Vec<f64> = (0..=n_nodes + 1).map(|i| (std::f64::consts::PI * i as f64 * h / ell).sin()).collect();
    let peak = raw[1..=n_nodes].iter().cloned().fold(0.0, f64::max);
    let mut grad_u0_p = 0.0;
    for i in 0..=n_nodes {
        let a = if i == 0 { 0.0 } else { raw[i] };
        let b = if i == n_nodes { 0.0 } else { raw[i + 1] };
        grad_u0_p += ((1.0 - delta0) * (b - a) / (peak * h)).abs().powf(p) * h;
    }

    let fact: f64 = (1..=SIGMA + 2).map(|i| i as f64).product();
    let q = t * ell;
    let k1_initial = ell * (-2.0 * s * delta0.ln()).exp();
    let k1_drift = q * max_abs_dg * max_abs_df;
    let k1_trace = 2.0 * s * (s + 1.0) * c_h_sigma_sq * q / (fact * fact);
    let k1 = k1_initial + k1_drift + k1_trace;
    let k2 = grad_u0_p.max(p) * (p * t * ((p - 1.0) * c_h_sq + c_f)).exp();
    let k0v = 1.0 / (1.0 - delta0);
    let cap = 1.0_f64.max(ell.powf(1.0 - 1.0 / p - ALPHA));
    let a_d = 2.0;
    let da = d / ALPHA;
    let k = a_d * (-(s * 2f64.ln()) - (k0v.powf(-s) + 1.0).ln() - da * (cap * k0v).ln()).exp();
    let k1pp = 4.0 * s * s * c_h_sigma_sq * t / (fact * fact);
    let k1p = k1pp * k1;
    let k2p = c_h_sq * k2;
    let k2pp = k2p;
    let k1pp_tilde = k1pp.max(k1p * k1 + 1.0);
    let k2pp_tilde = k2pp.max(k2p + 1.0);
    let rho_v = p * (s - da) / (p + da);
    let eta_bar = 1.0 + d / (p * ALPHA);
    let expo = 1.0 / (1.0 + d / (p * ALPHA));
    let l1 = (0.5 * k * (1.0 + d / (p * ALPHA))).powf(expo);
    let l2 = (0.5 * k * (1.0 + p * ALPHA / d)).powf(expo);
    let l = (l1 / (8.0 * k1p)).min(l2 / (8.0 * k2 * k2p));
    let root = |x: f64| (x.ln() / rho_v).exp();
    let terms = [
        delta0,
        0.5,
        root(l1 / (2.0 * k1)),
        root(l1 * k1 / 2.0),
        root(l2 / (2.0 * k2)),
        root(l / 2f64.ln()),
    ];
    let delta_star = terms.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut out = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        out.insert(k.to_string(), Value::from(v));
    };
    for (k, v) in [
        ("p", p),
        ("t_final", t),
        ("domain_measure", ell),
        ("cylinder_measure", q),
        ("delta0", delta0),
        ("alpha", ALPHA),
        ("c_f", c_f),
        ("r_f", -r_star),
        ("r_f_high", r_star),
        ("c_h_sq", c_h_sq),
        ("c_h_sigma_sq", c_h_sigma_sq),
        ("noise_tail_bound", noise_tail_bound),
        ("grad_u0_p", grad_u0_p),
        ("max_abs_dg", max_abs_dg),
        ("max_abs_df", max_abs_df),
        ("k1_initial", k1_initial),
        ("k1_drift", k1_drift),
        ("k1_trace", k1_trace),
        ("k1", k1),
        ("k2", k2),
        ("k0", k0v),
        ("c_alpha_p", cap),
        ("a_d", a_d),
        ("k", k),
        ("k1p", k1p),
        ("k1pp", k1pp),
        ("k2p", k2p),
        ("k2pp", k2pp),
        ("k1pp_tilde", k1pp_tilde),
        ("k2pp_tilde", k2pp_tilde),
        ("rho", rho_v),
        ("eta_bar", eta_bar),
        ("l1", l1),
        ("l2", l2),
        ("l", l),
        ("delta_star", delta_star),
    ] {
        put(k, v);
    }
    out.insert("d".into(), Value::from(1));
    out.insert("sigma".into(), Value::from(SIGMA));
    out.insert("delta_star_terms".into(), Value::from(terms.to_vec()));
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn compare_values(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(u, v)| compare_values(u, v)).fold(0.0, f64::max)
        }
        (Value::Number(x), Value::Number(y)) => rel_err(x.as_f64().unwrap(), y.as_f64().unwrap()),
        _ => f64::INFINITY,
    }
}

fn constant_chain_audit() -> Outcome {
    let rho_exact = rho(2.0, 1, 3, 0.4);
    let rho_ok = rel_err(rho_exact, 2.0 / 9.0) <= 1e-15;
    let k0_ok = k0(0.5) == 2.0;
    let mut worst = (0.0_f64, String::new());
    let mut keys_ok = true;
    let mut star_ok = true;
    for delta0 in [0.5, 0.02] {
        let chain = compute_constants(&default_problem(delta0), ALPHA).unwrap();
        star_ok &= chain.delta_star <= delta0.min(0.5);
        let got: BTreeMap<String, Value> = match serde_json::to_value(&chain).unwrap() {
            Value::Object(m) => m.into_iter().collect(),
            _ => unreachable!(),
        };
        let want = oracle_chain(delta0);
        keys_ok &= got.keys().eq(want.keys());
        for (k, v) in &want {
            let e = got.get(k).map_or(f64::INFINITY, |g| compare_values(g, v));
            if e > worst.0 {
                worst = (e, format!("{k} @ δ₀={delta0}"));
            }
        }
    }
    outcome(
        rho_ok && k0_ok && keys_ok && star_ok && worst.0 <= 1e-9,
        format!(
            "ρ = {rho_exact:.17}, k₀(0.5) = {}, fields matched: {keys_ok}, worst rel err {:.2e} ({}), δ₊ <= min(δ₀, 1/2): {star_ok}",
            k0(0.5),
            worst.0,
            worst.1
        ),
    )
}

fn tail_structure() -> Outcome {
    let sh = shared_ensemble();
    let summary = &sh.run.summary;
    let mut lines = Vec::new();
    for c in &summary.cdf {
        lines.push(format!(
            "δ={} P̂={:.4}±{:.4} bound={:.3e}{}",
            c.delta,
            c.p_hat,
            c.stderr,
            c.bound,
            if c.vacuous { " (vacuous)" } else { "" }
        ));
    }
    let cdf_ok = summary.cdf.len() == 4 && summary.tail_consistent();

    // synthetic Fréchet-type data with P{δ <= x} = exp(-c x^{-ρ})
    let planted = 2.0;
    let r = sh.chain.rho;
    let m = 20_000;
    let samples: Vec<f64> = (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (planted / -u.ln()).powf(1.0 / r)
        })
        .collect();
    let fit = fit_tail(&samples, &[0.05, 0.1, 0.2, 0.3, 0.5, 1.0], r).unwrap();
    let fit_ok = rel_err(-fit.slope, planted) <= 0.05;
    outcome(
        cdf_ok && fit_ok,
        format!(
            "M={} {}; δ₊={:.3e}; synthetic fit slope {:.4} vs -{planted}",
            summary.n_paths - summary.n_failed,
            lines.join(", "),
            sh.chain.delta_star,
            fit.slope
        ),
    )
}

fn epsilon_sweep_check() -> Outcome {
    let pr = default_problem(0.02);
    let chain = compute_constants(&pr, ALPHA).unwrap();
    let cfg = EnsembleConfig {
        n_paths: 500,
        base_seed: SEED,
        delta_queries: vec![],
        eta_queries: vec![0.01],
        epsilon_grid: vec![1.0, 0.5, 0.25, 0.1],
    };
    let sweep = epsilon_sweep(&pr, &cfg, Some(&chain), Execution::default(), false).unwrap();
    println!("    {:>6} {:>10} {:>10} {:>14} {:>14}", "ε", "mean Λ", "P̂", "ε ln P̂", "-N(δ₀-η)");
    for e in &sweep.entries {
        let s = &e.summary;
        let q = &s.eta[0];
        println!(
            "    {:>6} {:>10.6} {:>10.4} {:>14} {:>14.6e}",
            s.epsilon,
            s.lambda_mean,
            q.p_hat,
            q.eps_ln_p.map_or("-".to_string(), |v| format!("{v:.6}")),
            q.minus_rate
        );
    }
    let ok = sweep.hypothesis_satisfied && sweep.checks.mean_monotone && sweep.checks.tail_monotone.iter().all(|&b| b);
    outcome(
        ok,
        format!(
            "hypothesis {}, tail non-increasing {:?}, mean non-decreasing {}",
            sweep.hypothesis_satisfied, sweep.checks.tail_monotone, sweep.checks.mean_monotone
        ),
    )
}

fn reproducibility() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_stochsep");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "potential": {"kind": "logarithmic", "theta": 1.0, "theta0": 2.0},
  "noise": {"kind": "power_family", "sigma": 3, "n_modes": 16, "epsilon": 1.0},
  "mesh": {"domain_length": 1.0, "n_interior": 64},
  "solver": {"t_final": 0.05, "dt": 0.0001, "lambda": 0.0001, "p": 2.0},
  "initial": {"delta0": 0.02},
  "analysis": {"alpha": 0.4},
  "ensemble": {"n_paths": 24, "base_seed": 5, "delta_queries": [0.005, 0.01, 0.015],
               "eta_queries": [0.01], "epsilon_grid": [1.0, 0.25]}
}"#,
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let run = |sub: &[&str], threads: &str, out: &Path| {
        let status = Command::new(bin)
            .args(sub)
            .args(["--config", cfg, "--out-dir", out.to_str().unwrap()])
            .env("RAYON_NUM_THREADS", threads)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .output()
            .unwrap();
        status.status.code()
    };
    let mut compared = 0;
    let mut mismatched = Vec::new();
    let mut codes = Vec::new();
    let ens_samples = dir.path().join("a-ensemble").join("lambda_samples.csv");
    let subs: Vec<(&str, Vec<String>)> = vec![
        ("solve", vec!["solve".into()]),
        ("verify-path", vec!["verify-path".into(), "--path-id".into(), "3".into()]),
        ("ensemble", vec!["ensemble".into()]),
        ("eps-sweep", vec!["eps-sweep".into()]),
        ("constants", vec!["constants".into()]),
        ("fit-tail", vec!["fit-tail".into(), "--samples".into(), ens_samples.to_str().unwrap().into()]),
    ];
    for (name, args) in &subs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = dir.path().join(format!("a-{name}"));
        let b = dir.path().join(format!("b-{name}"));
        let ca = run(&args, "1", &a);
        let cb = run(&args, "4", &b);
        codes.push(format!("{name}={}", ca.map_or("signal".to_string(), |c| c.to_string())));
        if ca != cb {
            mismatched.push(format!("{name}: exit {ca:?} vs {cb:?}"));
            continue;
        }
        let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        files.sort();
        if files.is_empty() {
            mismatched.push(format!("{name}: no outputs"));
        }
        for f in files {
            compared += 1;
            let x = std::fs::read(a.join(&f)).unwrap();
            let y = std::fs::read(b.join(&f)).ok();
            if Some(&x) != y.as_ref() {
                mismatched.push(format!("{name}/{}", f.to_string_lossy()));
            }
        }
    }
    outcome(
        mismatched.is_empty() && compared > 0,
        format!("{compared} files, exit codes [{}], mismatches: {mismatched:?}", codes.join(" ")),
    )
}

fn main() {
    // `cargo test -- --list` and filters come through here too; there is
    // nothing to list, so just honour the listing request.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("separation witness", separation_witness),
        ("deterministic threshold", deterministic_threshold),
        ("Yosida suite", yosida_suite),
        ("lambda Cauchy rate", lambda_rate),
        ("sign-flip equivariance", sign_flip),
        ("operator identities", operator_identities),
        ("pathwise inequalities", pathwise_inequalities),
        ("constant chain audit", constant_chain_audit),
        ("tail structure", tail_structure),
        ("epsilon sweep", epsilon_sweep_check),
        ("reproducibility", reproducibility),
    ];
    // Positional numbers select a subset, e.g. `cargo test --test acceptance -- 3 6`.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !out.ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1}s]",
            if out.ok { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Explicit constants behind the pathwise bounds and the tail estimate
//! `P{Λ <= δ} <= exp(-L δ^{-ρ})`, plus the empirical checks run against
//! ensembles of [`PathRecord`]s.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{factorial, sup_abs};
use crate::problem::{Problem, DIM};
use crate::solver::PathRecord;

/// Admissible window `(d/ς, 1 - d/p)` for the Hölder exponent.
pub fn alpha_window(sigma: u32, p: f64) -> (f64, f64) {
    let d = DIM as f64;
    (d / sigma as f64, 1.0 - d / p)
}

pub fn default_alpha(sigma: u32, p: f64) -> f64 {
    let (lo, hi) = alpha_window(sigma, p);
    0.5 * (lo + hi)
}

/// `ρ = p (ς - d/α) / (p + d/α)`.
pub fn rho(p: f64, d: u32, sigma: u32, alpha: f64) -> f64 {
    let da = d as f64 / alpha;
    p * (sigma as f64 - da) / (p + da)
}

/// `η̄ = 1 + d / (p α)`.
pub fn eta_bar(p: f64, d: u32, alpha: f64) -> f64 {
    1.0 + d as f64 / (p * alpha)
}

/// `k₀ = 1 + δ₀ / (1 - δ₀)`.
pub fn k0(delta0: f64) -> f64 {
    1.0 + delta0 / (1.0 - delta0)
}

/// Hölder embedding constant for `d = 1`: `max(1, ℓ^{1 - 1/p - α})`.
pub fn c_alpha_p(length: f64, p: f64, alpha: f64) -> f64 {
    length.powf(1.0 - 1.0 / p - alpha).max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantChain {
    // inputs
    pub p: f64,
    pub d: u32,
    pub sigma: u32,
    pub t_final: f64,
    pub domain_measure: f64,
    pub cylinder_measure: f64,
    pub delta0: f64,
    pub alpha: f64,
    pub c_f: f64,
    pub r_f: f64,
    pub r_f_high: f64,
    pub c_h_sq: f64,
    pub c_h_sigma_sq: f64,
    pub noise_tail_bound: f64,
    pub grad_u0_p: f64,
    // K1 pieces
    pub max_abs_dg: f64,
    pub max_abs_df: f64,
    pub k1_initial: f64,
    pub k1_drift: f64,
    pub k1_trace: f64,
    pub k1: f64,
    pub k2: f64,
    pub k0: f64,
    pub c_alpha_p: f64,
    pub a_d: f64,
    pub k: f64,
    pub k1p: f64,
    pub k1pp: f64,
    pub k2p: f64,
    pub k2pp: f64,
    pub k1pp_tilde: f64,
    pub k2pp_tilde: f64,
    pub rho: f64,
    pub eta_bar: f64,
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
    /// The six candidates whose minimum is `delta_star`.
    pub delta_star_terms: [f64; 6],
    pub delta_star: f64,
}

/// Every constant of the chain for `problem` at Hölder exponent `alpha`.
pub fn compute_constants(problem: &Problem, alpha: f64) -> Result<ConstantChain> {
    let p = problem.solver.p;
    let sigma = problem.barrier.sigma;
    let d = DIM;
    let (lo, hi) = alpha_window(sigma, p);
    if !(alpha > lo && alpha < hi) {
        return Err(Error::config(format!("alpha = {alpha} outside the admissible window ({lo}, {hi})")));
    }
    let delta0 = problem.delta0;
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(Error::config(format!("delta0 must lie in (0, 1), got {delta0}")));
    }
    let t = problem.solver.t_final;
    let ell = problem.mesh.length;
    let q = t * ell;
    let s = sigma as f64;

    let st = problem.stationary;
    let nc = problem.noise.noise_constants(&problem.potential)?;
    let max_abs_dg = sup_abs(|r| problem.barrier.dg(r), st.r_low, st.r_high, 10_000);
    let max_abs_df = sup_abs(|r| problem.potential.df_unchecked(r), st.r_low, st.r_high, 10_000);

    let k1_initial = ell / delta0.powf(2.0 * s);
    let k1_drift = q * max_abs_dg * max_abs_df;
    let fact = factorial(sigma + 2);
    let k1_trace = 2.0 * s * (s + 1.0) / (fact * fact) * nc.c_h_sigma_sq * q;
    let k1 = k1_initial + k1_drift + k1_trace;

    let grad_u0_p = problem.mesh.vp_norm_p(p, &problem.u0);
    let k2 = (p * ((p - 1.0) * nc.c_h_sq + problem.potential.c_f) * t).exp() * grad_u0_p.max(p);

    let k0v = k0(delta0);
    let cap = c_alpha_p(ell, p, alpha);
    let a_d = 2.0;
    let da = d as f64 / alpha;
    let k = a_d / (2f64.powf(s) * (k0v.powf(-s) + 1.0) * cap.powf(da) * k0v.powf(da));

    let m_factor = 4.0 * s * s / (fact * fact) * nc.c_h_sigma_sq * t;
    let k1p = m_factor * k1;
    let k1pp = m_factor;
    let k2p = nc.c_h_sq * k2;
    let k2pp = k2p;
    let k1pp_tilde = k1pp.max(k1p * k1 + 1.0);
    let k2pp_tilde = k2pp.max(k2p + 1.0);

    let rho_v = rho(p, d, sigma, alpha);
    let pa = p * alpha;
    let expo = pa / (pa + d as f64);
    let l1 = (k * (1.0 + d as f64 / pa) / 2.0).powf(expo);
    let l2 = (k * (1.0 + pa / d as f64) / 2.0).powf(expo);
    let l = 0.5 * (l1 / (4.0 * k1p)).min(l2 / (4.0 * k2 * k2p));

    let inv = 1.0 / rho_v;
    let delta_star_terms = [
        delta0,
        0.5,
        (l1 / (2.0 * k1)).powf(inv),
        (l1 * k1 / 2.0).powf(inv),
        (l2 / (2.0 * k2)).powf(inv),
        (l / std::f64::consts::LN_2).powf(inv),
    ];
    let delta_star = delta_star_terms.iter().cloned().fold(f64::INFINITY, f64::min);

    Ok(ConstantChain {
        p,
        d,
        sigma,
        t_final: t,
        domain_measure: ell,
        cylinder_measure: q,
        delta0,
        alpha,
        c_f: problem.potential.c_f,
        r_f: st.r_low,
        r_f_high: st.r_high,
        c_h_sq: nc.c_h_sq,
        c_h_sigma_sq: nc.c_h_sigma_sq,
        noise_tail_bound: nc.tail_bound,
        grad_u0_p,
        max_abs_dg,
        max_abs_df,
        k1_initial,
        k1_drift,
        k1_trace,
        k1,
        k2,
        k0: k0v,
        c_alpha_p: cap,
        a_d,
        k,
        k1p,
        k1pp,
        k2p,
        k2pp,
        k1pp_tilde,
        k2pp_tilde,
        rho: rho_v,
        eta_bar: eta_bar(p, d, alpha),
        l1,
        l2,
        l,
        delta_star_terms,
        delta_star,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBound {
    pub value: f64,
    /// `false` when `δ >= δ₊`: the value is then the trivial bound 1.
    pub in_range: bool,
}

/// `exp(-L δ^{-ρ})` for `0 < δ < δ₊`, else 1 flagged out of range.
pub fn tail_bound(chain: &ConstantChain, delta: f64) -> TailBound {
    if delta > 0.0 && delta < chain.delta_star {
        TailBound { value: (-chain.l * delta.powf(-chain.rho)).exp(), in_range: true }
    } else {
        TailBound { value: 1.0, in_range: false }
    }
}

/// `exp(-l² / (a l + b))`.
pub fn bernstein_bound(l: f64, a: f64, b: f64) -> f64 {
    (-l * l / (a * l + b)).exp()
}

/// `N(δ)`, the exponential rate of `P{Λ_ε <= δ}` as `ε -> 0`.
pub fn rate_function(chain: &ConstantChain, delta: f64) -> f64 {
    let x1 = chain.l1 * delta.powf(-chain.rho) - chain.k1;
    let x2 = chain.l2 / chain.k2 * delta.powf(-chain.rho) - 1.0;
    let n1 = x1 * x1 / (chain.k1p * x1 + chain.k1pp_tilde);
    let n2 = x2 * x2 / (chain.k2p * x2 + chain.k2pp_tilde);
    n1.min(n2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelCheck {
    pub level: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    /// `empirical <= bound + 2 stderr`
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleTailReport {
    pub epsilon: f64,
    pub m1: Vec<LevelCheck>,
    pub m2: Vec<LevelCheck>,
    /// fraction of paths with `[M_i] <= K_i' ε + K̃_i'' ε max M_i`
    pub qv1_fraction: f64,
    pub qv2_fraction: f64,
    pub all_satisfied: bool,
}

fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// `P{max M_i >= l}` against `exp(-(1/ε) l² / (K_i' l + K̃_i''))` on `n_levels`
/// levels from 0 up to the largest observed maximum.
pub fn verify_martingale_tails(
    records: &[PathRecord],
    chain: &ConstantChain,
    epsilon: f64,
    n_levels: usize,
) -> Result<MartingaleTailReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no path records".into()));
    }
    let n = records.len();
    let bound = |l: f64, a: f64, b: f64| -> f64 {
        if l <= 0.0 {
            1.0
        } else if epsilon == 0.0 {
            0.0
        } else {
            (-(l * l) / (a * l + b) / epsilon).exp()
        }
    };
    let levels_for = |maxima: &[f64], a: f64, b: f64| -> Vec<LevelCheck> {
        let top = maxima.iter().cloned().fold(0.0, f64::max);
        let count = n_levels.max(1);
        (0..=count)
            .map(|i| {
                let level = if top > 0.0 { top * i as f64 / count as f64 } else { i as f64 };
                let hits = maxima.iter().filter(|&&m| m >= level).count();
                let empirical = hits as f64 / n as f64;
                let stderr = binomial_stderr(empirical, n);
                let b = bound(level, a, b);
                LevelCheck { level, empirical, stderr, bound: b, satisfied: empirical <= b + 2.0 * stderr }
            })
            .collect()
    };
    let max1: Vec<f64> = records.iter().map(PathRecord::max_m1).collect();
    let max2: Vec<f64> = records.iter().map(PathRecord::max_m2).collect();
    let m1 = levels_for(&max1, chain.k1p, chain.k1pp_tilde);
    let m2 = levels_for(&max2, chain.k2p, chain.k2pp_tilde);
    let qv1_fraction = records
        .iter()
        .filter(|r| r.qv1 <= chain.k1p * epsilon + chain.k1pp_tilde * epsilon * r.max_m1())
        .count() as f64
        / n as f64;
    let qv2_fraction = records
        .iter()
        .filter(|r| r.qv2 <= chain.k2p * epsilon + chain.k2pp_tilde * epsilon * r.max_m2())
        .count() as f64
        / n as f64;
    let all_satisfied = m1.iter().chain(&m2).all(|c| c.satisfied);
    Ok(MartingaleTailReport { epsilon, m1, m2, qv1_fraction, qv2_fraction, all_satisfied })
}

/// Outcome of the discrete pathwise inequalities on one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PathChecks {
    /// `𝒢(uⁿ) <= slack K₁ + max_{m<=n} M₁ᵐ` at every record
    pub g_bound: bool,
    /// `‖∇uⁿ‖_p^p + ∫₀ⁿ‖Δ_p u‖² <= slack K₂ (1 + max_{m<=n} M₂ᵐ)` at every record
    pub vp_bound: bool,
    /// `[M₁] <= slack K₁' ε + K₁'' ε max M₁`
    pub qv1: bool,
    /// `[M₂] <= slack K₂' ε + K₂'' ε max M₂`
    pub qv2: bool,
}

pub fn check_path(rec: &PathRecord, chain: &ConstantChain, slack: f64) -> PathChecks {
    let eps = rec.epsilon;
    let mut run1 = f64::NEG_INFINITY;
    let mut run2 = f64::NEG_INFINITY;
    let mut g_bound = !rec.separation_violated;
    let mut vp_bound = !rec.separation_violated;
    for i in 0..rec.times.len() {
        run1 = run1.max(rec.m1_history[i]);
        run2 = run2.max(rec.m2_history[i]);
        g_bound &= rec.g_history[i] <= slack * chain.k1 + run1;
        vp_bound &= rec.vp_history[i] + rec.dissipation_history[i] <= slack * chain.k2 * (1.0 + run2);
    }
    PathChecks {
        g_bound,
        vp_bound,
        qv1: rec.qv1 <= slack * chain.k1p * eps + chain.k1pp * eps * rec.max_m1(),
        qv2: rec.qv2 <= slack * chain.k2p * eps + chain.k2pp * eps * rec.max_m2(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub n_paths: usize,
    pub g_fraction: f64,
    pub vp_fraction: f64,
    pub qv1_fraction: f64,
    pub qv2_fraction: f64,
}

impl PathwiseReport {
    pub fn from_checks(checks: &[PathChecks]) -> Self {
        let n = checks.len();
        let frac = |f: fn(&PathChecks) -> bool| checks.iter().filter(|c| f(c)).count() as f64 / n.max(1) as f64;
        Self {
            n_paths: n,
            g_fraction: frac(|c| c.g_bound),
            vp_fraction: frac(|c| c.vp_bound),
            qv1_fraction: frac(|c| c.qv1),
            qv2_fraction: frac(|c| c.qv2),
        }
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.n_paths > 0
            && self.g_fraction >= threshold
            && self.vp_fraction >= threshold
            && self.qv1_fraction >= threshold
            && self.qv2_fraction >= threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(δ, P̂{Λ <= δ})` pairs that entered the fit
    pub points: Vec<(f64, f64)>,
}

/// `P̂{Λ <= δ}` at each query.
pub fn empirical_cdf(samples: &[f64], deltas: &[f64]) -> Vec<f64> {
    let n = samples.len().max(1) as f64;
    deltas.iter().map(|&d| samples.iter().filter(|&&s| s <= d).count() as f64 / n).collect()
}

/// Least squares of `ln P̂{Λ <= δ}` against `δ^{-ρ}` over the queries with a
/// nonzero empirical tail.
pub fn fit_tail(samples: &[f64], deltas: &[f64], rho: f64) -> Result<TailFit> {
    let cdf = empirical_cdf(samples, deltas);
    let mut points: Vec<(f64, f64)> =
        deltas.iter().cloned().zip(cdf).filter(|&(_, p)| p > 0.0).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| a.0 == b.0);
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "tail fit needs at least 3 query points with a nonzero empirical tail, found {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|&(d, _)| d.powf(-rho)).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, p)| p.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("tail fit abscissae are degenerate".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(TailFit { slope, intercept, r_squared, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_pins() {
        assert!((rho(2.0, 1, 3, 0.4) - 2.0 / 9.0).abs() < 1e-15);
        assert!((eta_bar(2.0, 1, 0.4) - 2.25).abs() < 1e-15);
        assert_eq!(k0(0.5), 2.0);
    }

    #[test]
    fn eta_bar_balances_rates() {
        let (p, d, s) = (2.0, 1, 3.0);
        for alpha in [0.35, 0.4, 0.45] {
            let e = eta_bar(p, d, alpha);
            let lhs = (s - 1.0 / alpha) / e;
            let rhs = (e - 1.0) / e * p * alpha * (s - 1.0 / alpha);
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn bernstein_values() {
        assert!((bernstein_bound(1.0, 1.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((bernstein_bound(2.0, 0.5, 1e-300) - (-4.0f64).exp()).abs() < 1e-12);
        assert!(bernstein_bound(2.0, 1.0, 1.0) < bernstein_bound(1.0, 1.0, 1.0));
    }

    #[test]
    fn fit_rejects_flat_samples() {
        let s = vec![0.5; 100];
        assert!(matches!(fit_tail(&s, &[0.1, 0.2, 0.3], 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn cdf_is_monotone() {
        let s: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let c = empirical_cdf(&s, &[0.1, 0.2, 0.5, 0.9]);
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }
}

//! Small scalar routines shared by the potential, noise and analysis modules.

use crate::error::{Error, Result};

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub(crate) fn bisect<F>(what: &'static str, f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() && !f_hi.is_finite() {
        return Err(Error::Convergence {
            what,
            iterations: 0,
            residual: f_lo.abs().min(f_hi.abs()),
        });
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section search for the maximum of a unimodal `g` on `[a, b]`.
pub(crate) fn golden_max<G>(g: G, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    G: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a).abs() > tol {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    let x = 0.5 * (a + b);
    let gx = g(x);
    [(x, gx), (c, gc), (d, gd)]
        .into_iter()
        .fold((x, gx), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// `max |f|` over `[a, b]`: uniform sampling with `samples + 1` points, then a
/// golden-section refinement around every sampled local maximum. Endpoints are
/// always candidates.
pub(crate) fn sup_abs<F>(f: F, a: f64, b: f64, samples: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let n = samples.max(2);
    let h = (b - a) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| if i == n { b } else { a + i as f64 * h }).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x).abs()).collect();
    let mut best = vals.iter().cloned().fold(0.0_f64, f64::max);
    for i in 1..n {
        if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] && vals[i] > 0.0 {
            let (_, v) = golden_max(|x| f(x).abs(), xs[i - 1], xs[i + 1], 1e-13 * (1.0 + xs[i].abs()));
            best = best.max(v);
        }
    }
    best
}

/// `n` Chebyshev points of the first kind mapped to `(a, b)`; all strictly interior.
pub(crate) fn chebyshev_points(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..n).map(move |j| {
        let t = ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
        mid + half * t
    })
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub(crate) fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `n!` as a float.
pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

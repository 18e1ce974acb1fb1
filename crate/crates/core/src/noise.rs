//! Diffusion coefficients `h_k`, the operator `H_λ = H ∘ J_λ`, the noise
//! constants and keyed Wiener increments.
//!
//! Each mode `k` is a scalar Brownian motion acting pointwise through
//! `h_k(u(x))`; the sum over modes is truncated at `n_modes`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::numeric::{bisect, sup_abs};
use crate::potential::PotentialSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    PowerFamily,
    Custom,
}

type ModeFn = Arc<dyn Fn(usize, u32, f64) -> f64 + Send + Sync>;

/// User-supplied family: `deriv(k, n, r)` is `h_k^{(n)}(r)`, needed up to
/// `n = sigma + 2`.
#[derive(Clone)]
pub struct CustomNoise {
    pub deriv: ModeFn,
    /// Set when every `h_k` is even.
    pub even: bool,
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomNoise").field("even", &self.even).finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    kind: NoiseKind,
    sigma: u32,
    n_modes: usize,
    epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail_tolerance: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawNoise", into = "RawNoise")]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: u32,
    pub n_modes: usize,
    pub epsilon: f64,
    /// Upper limit on the analytic tail of `C_{H,ς}^2` beyond `n_modes`.
    pub tail_tolerance: Option<f64>,
    custom: Option<CustomNoise>,
}

impl TryFrom<RawNoise> for NoiseSpec {
    type Error = Error;

    fn try_from(raw: RawNoise) -> Result<Self> {
        if raw.kind == NoiseKind::Custom {
            return Err(Error::config(
                "custom noise families carry closures and can only be built programmatically",
            ));
        }
        let mut spec = Self::power_family(raw.sigma, raw.n_modes, raw.epsilon)?;
        spec.tail_tolerance = raw.tail_tolerance;
        if let Some(tol) = raw.tail_tolerance {
            if !(tol > 0.0) {
                return Err(Error::config(format!("tail_tolerance must be positive, got {tol}")));
            }
        }
        Ok(spec)
    }
}

impl From<NoiseSpec> for RawNoise {
    fn from(n: NoiseSpec) -> Self {
        Self {
            kind: n.kind,
            sigma: n.sigma,
            n_modes: n.n_modes,
            epsilon: n.epsilon,
            tail_tolerance: n.tail_tolerance,
        }
    }
}

/// Truncated noise constants with per-mode norms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseConstants {
    /// `C_H^2 = Σ_k (‖h_k‖_{W^{1,∞}}^2 + ‖F'' h_k^2‖_∞)`
    pub c_h_sq: f64,
    /// `C_{H,ς}^2 = Σ_k ‖h_k‖_{W^{ς+2,∞}}^2`
    pub c_h_sigma_sq: f64,
    pub c_h: f64,
    pub c_h_sigma: f64,
    /// Bound on the omitted `Σ_{k >= K} ‖h_k‖_{W^{ς+2,∞}}^2`.
    pub tail_bound: f64,
    /// `‖h_k^{(j)}‖_∞` for `j = 0..=ς+2`, one row per mode.
    pub derivative_sups: Vec<Vec<f64>>,
    /// `‖F'' h_k^2‖_∞` per mode.
    pub f2_h2_sups: Vec<f64>,
}

/// Dense polynomial, `coef[i]` multiplies `r^i`.
#[derive(Clone, Debug, PartialEq)]
struct Poly {
    coef: Vec<f64>,
}

impl Poly {
    /// `(1 - r^2)^m`
    fn one_minus_square_pow(m: u32) -> Self {
        let m = m as usize;
        let mut coef = vec![0.0; 2 * m + 1];
        let mut binom = 1.0;
        for j in 0..=m {
            coef[2 * j] = if j % 2 == 0 { binom } else { -binom };
            binom = binom * (m - j) as f64 / (j + 1) as f64;
        }
        Self { coef }
    }

    fn derivative(&self) -> Self {
        if self.coef.len() <= 1 {
            return Self { coef: vec![0.0] };
        }
        Self { coef: self.coef.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect() }
    }

    fn eval(&self, r: f64) -> f64 {
        self.coef.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    /// `max_{[-1,1]} |p|` from the endpoints and the real roots of `p'`.
    fn sup_on_unit(&self) -> f64 {
        let d = self.derivative();
        let mut best = self.eval(-1.0).abs().max(self.eval(1.0).abs());
        const N: usize = 4096;
        let xs: Vec<f64> = (0..=N).map(|i| -1.0 + 2.0 * i as f64 / N as f64).collect();
        let dv: Vec<f64> = xs.iter().map(|&x| d.eval(x)).collect();
        for i in 0..N {
            best = best.max(self.eval(xs[i]).abs());
            if dv[i] == 0.0 {
                continue;
            }
            if dv[i].signum() != dv[i + 1].signum() && dv[i + 1] != 0.0 {
                if let Ok(x) = bisect("critical point", |x| d.eval(x), xs[i], xs[i + 1], 0.0) {
                    best = best.max(self.eval(x).abs());
                }
            }
        }
        best
    }
}

impl NoiseSpec {
    /// `h_k(r) = (1 - r^2)^{σ+3} / (k + 1)`.
    pub fn power_family(sigma: u32, n_modes: usize, epsilon: f64) -> Result<Self> {
        if sigma == 0 {
            return Err(Error::config("noise sigma must be at least 1"));
        }
        if n_modes == 0 {
            return Err(Error::config("n_modes must be at least 1"));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self { kind: NoiseKind::PowerFamily, sigma, n_modes, epsilon, tail_tolerance: None, custom: None })
    }

    pub fn custom(sigma: u32, n_modes: usize, epsilon: f64, family: CustomNoise) -> Result<Self> {
        let mut spec = Self::power_family(sigma, n_modes, epsilon)?;
        spec.kind = NoiseKind::Custom;
        spec.custom = Some(family);
        Ok(spec)
    }

    /// Same family with another intensity.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self { epsilon, ..self.clone() })
    }

    pub fn is_even(&self) -> bool {
        match &self.custom {
            None => true,
            Some(c) => c.even,
        }
    }

    /// Exponent `σ + 3` of the power family.
    pub fn power(&self) -> u32 {
        self.sigma + 3
    }

    /// `h_k(r)`.
    pub fn eval_h(&self, k: usize, r: f64) -> Result<f64> {
        if k >= self.n_modes {
            return Err(Error::ModeIndex { index: k, n_modes: self.n_modes });
        }
        if !(r.abs() <= 1.0) {
            return Err(Error::Domain { what: "h_k", value: r });
        }
        Ok(self.h_unchecked(k, r))
    }

    /// `h_k^{(n)}(r)`.
    pub fn eval_h_derivative(&self, k: usize, n: u32, r: f64) -> Result<f64> {
        if k >= self.n_modes {
            return Err(Error::ModeIndex { index: k, n_modes: self.n_modes });
        }
        if !(r.abs() <= 1.0) {
            return Err(Error::Domain { what: "h_k derivative", value: r });
        }
        Ok(match &self.custom {
            Some(c) => (c.deriv)(k, n, r),
            None => {
                let mut poly = Poly::one_minus_square_pow(self.power());
                for _ in 0..n {
                    poly = poly.derivative();
                }
                poly.eval(r) / (k as f64 + 1.0)
            }
        })
    }

    #[inline]
    pub(crate) fn h_unchecked(&self, k: usize, r: f64) -> f64 {
        match &self.custom {
            Some(c) => (c.deriv)(k, 0, r),
            None => (1.0 - r * r).powi(self.power() as i32) / (k as f64 + 1.0),
        }
    }

    /// Writes `h_k(r)` for all modes into `out`. For the power family the
    /// common profile is evaluated once.
    #[inline]
    pub(crate) fn h_all(&self, r: f64, out: &mut [f64]) {
        match &self.custom {
            Some(c) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (c.deriv)(k, 0, r);
                }
            }
            None => {
                let base = (1.0 - r * r).powi(self.power() as i32);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = base / (k as f64 + 1.0);
                }
            }
        }
    }

    /// Truncated `C_H`, `C_{H,ς}` and the tail bound. `potential` supplies `F''`.
    pub fn noise_constants(&self, potential: &PotentialSpec) -> Result<NoiseConstants> {
        let top = self.sigma + 2;
        let edge = 1.0 - 1e-12;
        let mut derivative_sups = Vec::with_capacity(self.n_modes);
        let mut f2_h2_sups = Vec::with_capacity(self.n_modes);
        match &self.custom {
            None => {
                let mut poly = Poly::one_minus_square_pow(self.power());
                let mut base = Vec::with_capacity(top as usize + 1);
                for _ in 0..=top {
                    base.push(poly.sup_on_unit());
                    poly = poly.derivative();
                }
                let m = self.power() as i32;
                let f2 = sup_abs(
                    |r| potential.d2f_unchecked(r) * (1.0 - r * r).powi(2 * m),
                    -edge,
                    edge,
                    10_000,
                );
                for k in 0..self.n_modes {
                    let s = 1.0 / (k as f64 + 1.0);
                    derivative_sups.push(base.iter().map(|b| b * s).collect());
                    f2_h2_sups.push(f2 * s * s);
                }
            }
            Some(c) => {
                for k in 0..self.n_modes {
                    let row: Vec<f64> =
                        (0..=top).map(|n| sup_abs(|r| (c.deriv)(k, n, r), -1.0, 1.0, 10_000)).collect();
                    let f2 = sup_abs(
                        |r| {
                            let h = (c.deriv)(k, 0, r);
                            potential.d2f_unchecked(r) * h * h
                        },
                        -edge,
                        edge,
                        10_000,
                    );
                    derivative_sups.push(row);
                    f2_h2_sups.push(f2);
                }
            }
        }
        let mut c_h_sq = 0.0;
        let mut c_h_sigma_sq = 0.0;
        let mut decay = 0.0_f64;
        for (k, (row, f2)) in derivative_sups.iter().zip(&f2_h2_sups).enumerate() {
            let w1 = row[0] + row[1];
            let ws: f64 = row.iter().sum();
            c_h_sq += w1 * w1 + f2;
            c_h_sigma_sq += ws * ws;
            decay = decay.max(ws * ws * (k as f64 + 1.0).powi(2));
        }
        if !(c_h_sq.is_finite() && c_h_sigma_sq.is_finite()) {
            return Err(Error::config("noise family violates the W^{σ+2,∞} summability assumption"));
        }
        // Σ_{k >= K} c / (k+1)^2 <= c / K
        let tail_bound = decay / self.n_modes as f64;
        if let Some(tol) = self.tail_tolerance {
            if tail_bound > tol {
                return Err(Error::config(format!(
                    "truncation tail {tail_bound:e} of C_H,σ^2 exceeds tail_tolerance {tol:e}; raise n_modes"
                )));
            }
        }
        Ok(NoiseConstants {
            c_h_sq,
            c_h_sigma_sq,
            c_h: c_h_sq.sqrt(),
            c_h_sigma: c_h_sigma_sq.sqrt(),
            tail_bound,
            derivative_sups,
            f2_h2_sups,
        })
    }

    /// Euler increment `√ε Σ_k h_k(J_λ(u)) dW_k`. With `lambda == 0` the
    /// coefficients are evaluated at `u` directly, which needs `|u| <= 1`.
    pub fn apply_h_lambda(
        &self,
        potential: &PotentialSpec,
        lambda: f64,
        u: &Field,
        dw: &WienerIncrement,
    ) -> Result<Field> {
        if dw.values.len() != self.n_modes {
            return Err(Error::Shape { expected: self.n_modes, got: dw.values.len() });
        }
        if !(lambda >= 0.0) {
            return Err(Error::Domain { what: "H_lambda lambda", value: lambda });
        }
        let amp = self.epsilon.sqrt();
        let mut h = vec![0.0; self.n_modes];
        let mut out = Vec::with_capacity(u.len());
        for &v in u.iter() {
            let r = if lambda == 0.0 {
                if !(v.abs() <= 1.0) {
                    return Err(Error::Domain { what: "H (lambda = 0)", value: v });
                }
                v
            } else {
                potential.resolvent(lambda, v)?
            };
            self.h_all(r, &mut h);
            let s: f64 = h.iter().zip(&dw.values).map(|(a, b)| a * b).sum();
            out.push(amp * s);
        }
        Ok(out.into())
    }
}

/// Sobolev norm `‖h‖_{W^{n,∞}} = Σ_{j<=n} ‖h^{(j)}‖_∞` from the per-derivative sups.
pub fn sobolev_norm(derivative_sups: &[f64], n: usize) -> f64 {
    derivative_sups.iter().take(n + 1).sum()
}

/// `K` Gaussian increments with variance `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement {
    pub dt: f64,
    pub values: Vec<f64>,
}

const DOMAIN_TAG: &[u8; 16] = b"stochsep/wiener1";

fn keyed_rng(seed: u64, path_id: u64, step_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_id.to_le_bytes());
    key[16..].copy_from_slice(DOMAIN_TAG);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(step_index);
    rng
}

/// Fills `out` with iid `N(0, dt)` draws keyed on `(seed, path_id, step_index)`;
/// entry `k` is the `k`-th draw of that stream.
pub fn fill_increment(seed: u64, path_id: u64, step_index: u64, dt: f64, out: &mut [f64]) {
    let mut rng = keyed_rng(seed, path_id, step_index);
    let sd = dt.sqrt();
    for o in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *o = sd * z;
    }
}

pub fn draw_increment(seed: u64, path_id: u64, step_index: u64, dt: f64, n_modes: usize) -> WienerIncrement {
    let mut values = vec![0.0; n_modes];
    fill_increment(seed, path_id, step_index, dt, &mut values);
    WienerIncrement { dt, values }
}

/// Supplies the increment for each time step of one trajectory.
pub trait IncrementSource: Send + Sync {
    fn fill(&self, step_index: u64, dt: f64, out: &mut [f64]);
}

/// The keyed stream of one `(seed, path_id)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Keyed {
    pub seed: u64,
    pub path_id: u64,
}

impl IncrementSource for Keyed {
    fn fill(&self, step_index: u64, dt: f64, out: &mut [f64]) {
        fill_increment(self.seed, self.path_id, step_index, dt, out);
    }
}

/// Sign-flipped increments of another source.
#[derive(Clone, Copy, Debug)]
pub struct Negated<S>(pub S);

impl<S: IncrementSource> IncrementSource for Negated<S> {
    fn fill(&self, step_index: u64, dt: f64, out: &mut [f64]) {
        self.0.fill(step_index, dt, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }
}

/// All increments zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct Silent;

impl IncrementSource for Silent {
    fn fill(&self, _step_index: u64, _dt: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

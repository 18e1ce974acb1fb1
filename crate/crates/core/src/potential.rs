//! The singular potential `F`, its monotone part `beta = F' + C_F id`, the
//! resolvent/Yosida/Moreau regularizations and the barrier `G_sigma`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, bisect, chebyshev_points};

/// Evaluations at `|r| >= EVAL_LIMIT` are rejected rather than clamped.
pub const EVAL_LIMIT: f64 = 1.0 - 1e-15;

/// Largest magnitude the resolvent may return. Sits strictly inside
/// `EVAL_LIMIT` so that `F` and `beta` stay evaluable at `J_lambda(r)`.
pub const RESOLVENT_EDGE: f64 = 1.0 - 2e-15;

/// Step tolerance of the resolvent root finder.
pub const RESOLVENT_TOL: f64 = 1e-12;

const RESOLVENT_MAX_ITER: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Logarithmic,
    Custom,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied potential. `df` must vanish at 0 and diverge at `±1`.
#[derive(Clone)]
pub struct CustomPotential {
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub d2f: ScalarFn,
    pub c_f: f64,
    pub stationary: StationaryInterval,
    /// Set when `beta` is odd, which lets the resolvent short-circuit at 0.
    pub odd: bool,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("c_f", &self.c_f)
            .field("stationary", &self.stationary)
            .field("odd", &self.odd)
            .finish_non_exhaustive()
    }
}

/// `(r_F, R_F)`: the outermost zeros of `F'` bounding the wells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryInterval {
    pub r_low: f64,
    pub r_high: f64,
}

impl StationaryInterval {
    pub fn new(r_low: f64, r_high: f64) -> Result<Self> {
        if !(-1.0 < r_low && r_low <= r_high && r_high < 1.0) {
            return Err(Error::config(format!(
                "stationary interval must satisfy -1 < r_low <= r_high < 1, got ({r_low}, {r_high})"
            )));
        }
        Ok(Self { r_low, r_high })
    }

    /// `max{|r_F|, |R_F|}`.
    pub fn max_abs(&self) -> f64 {
        self.r_low.abs().max(self.r_high.abs())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPotential {
    kind: PotentialKind,
    theta: f64,
    theta0: f64,
}

/// Singular potential on `(-1, 1)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawPotential", into = "RawPotential")]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub theta: f64,
    pub theta0: f64,
    pub c_f: f64,
    custom: Option<CustomPotential>,
}

impl TryFrom<RawPotential> for PotentialSpec {
    type Error = Error;

    fn try_from(raw: RawPotential) -> Result<Self> {
        match raw.kind {
            PotentialKind::Logarithmic => Self::logarithmic(raw.theta, raw.theta0),
            PotentialKind::Custom => Err(Error::config(
                "custom potentials carry closures and can only be built programmatically",
            )),
        }
    }
}

impl From<PotentialSpec> for RawPotential {
    fn from(p: PotentialSpec) -> Self {
        Self { kind: p.kind, theta: p.theta, theta0: p.theta0 }
    }
}

/// Output of the Yosida regularization at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Yosida {
    /// `J_lambda(r)`
    pub j: f64,
    /// `beta_lambda(r) = (r - J) / lambda`
    pub beta: f64,
    /// `beta_lambda'(r) = beta'(J) / (1 + lambda beta'(J))`
    pub dbeta: f64,
}

/// Knobs for [`PotentialSpec::validate`].
#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    /// `|F'(±(1 - 1e-8))|` must exceed this.
    pub divergence_magnitude: f64,
    pub samples: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { divergence_magnitude: 1.0, samples: 10_000 }
    }
}

fn check_domain(what: &'static str, r: f64) -> Result<()> {
    if r.is_finite() && r.abs() < EVAL_LIMIT {
        Ok(())
    } else {
        Err(Error::Domain { what, value: r })
    }
}

impl PotentialSpec {
    /// `F_log` with temperature `theta` and critical temperature `theta0`.
    pub fn logarithmic(theta: f64, theta0: f64) -> Result<Self> {
        if !(theta > 0.0 && theta0 > theta && theta0.is_finite()) {
            return Err(Error::config(format!(
                "logarithmic potential needs 0 < theta < theta0, got theta={theta}, theta0={theta0}"
            )));
        }
        Ok(Self {
            kind: PotentialKind::Logarithmic,
            theta,
            theta0,
            c_f: theta0 - theta,
            custom: None,
        })
    }

    pub fn custom(c: CustomPotential) -> Result<Self> {
        if !(c.c_f >= 0.0 && c.c_f.is_finite()) {
            return Err(Error::config(format!("c_f must be finite and non-negative, got {}", c.c_f)));
        }
        Ok(Self {
            kind: PotentialKind::Custom,
            theta: f64::NAN,
            theta0: f64::NAN,
            c_f: c.c_f,
            custom: Some(c),
        })
    }

    fn custom_ref(&self) -> &CustomPotential {
        self.custom.as_ref().expect("custom kind without closures")
    }

    /// `true` when `beta` is odd, so `J_lambda(0) = 0` and `r -> -r` is a symmetry.
    pub fn is_odd(&self) -> bool {
        match self.kind {
            PotentialKind::Logarithmic => true,
            PotentialKind::Custom => self.custom_ref().odd,
        }
    }

    pub fn eval_f(&self, r: f64) -> Result<f64> {
        check_domain("F", r)?;
        Ok(match self.kind {
            PotentialKind::Logarithmic => {
                0.5 * self.theta * ((1.0 + r) * r.ln_1p() + (1.0 - r) * (-r).ln_1p())
                    + 0.5 * self.theta0 * (1.0 - r * r)
            }
            PotentialKind::Custom => (self.custom_ref().f)(r),
        })
    }

    pub fn eval_df(&self, r: f64) -> Result<f64> {
        check_domain("F'", r)?;
        Ok(self.df_unchecked(r))
    }

    pub fn eval_d2f(&self, r: f64) -> Result<f64> {
        check_domain("F''", r)?;
        Ok(self.d2f_unchecked(r))
    }

    pub(crate) fn df_unchecked(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.theta * r.atanh() - self.theta0 * r,
            PotentialKind::Custom => (self.custom_ref().df)(r),
        }
    }

    pub(crate) fn d2f_unchecked(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.theta / (1.0 - r * r) - self.theta0,
            PotentialKind::Custom => (self.custom_ref().d2f)(r),
        }
    }

    /// `beta(x) = F'(x) + C_F x`, no domain check.
    pub fn beta(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.theta * (x.atanh() - x),
            PotentialKind::Custom => (self.custom_ref().df)(x) + self.c_f * x,
        }
    }

    /// `beta'(x)`, no domain check.
    pub fn dbeta(&self, x: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => {
                let x2 = x * x;
                self.theta * x2 / (1.0 - x2)
            }
            PotentialKind::Custom => (self.custom_ref().d2f)(x) + self.c_f,
        }
    }

    /// Antiderivative `beta_hat(x) = \int_0^x beta`.
    pub fn beta_hat(&self, x: f64) -> Result<f64> {
        check_domain("beta_hat", x)?;
        Ok(match self.kind {
            PotentialKind::Logarithmic => {
                0.5 * self.theta * ((1.0 + x) * x.ln_1p() + (1.0 - x) * (-x).ln_1p())
                    - 0.5 * self.theta * x * x
            }
            PotentialKind::Custom => adaptive_simpson(&|s| self.beta(s), 0.0, x, 1e-13),
        })
    }

    /// `J_lambda(r) = (I + lambda beta)^{-1}(r)`.
    pub fn resolvent(&self, lambda: f64, r: f64) -> Result<f64> {
        self.resolvent_from(lambda, r, r)
    }

    /// Resolvent with a Newton starting point (e.g. the previous time step).
    ///
    /// If `x + lambda beta(x) = r` has no root with `|x| <= RESOLVENT_EDGE`
    /// (the root is closer to `±1` than double precision resolves), the
    /// nearest edge is returned; `(r - J)/lambda` is then still the correct
    /// Yosida value to working precision.
    pub fn resolvent_from(&self, lambda: f64, r: f64, guess: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain { what: "resolvent lambda", value: lambda });
        }
        if !r.is_finite() {
            return Err(Error::Domain { what: "resolvent argument", value: r });
        }
        if r == 0.0 && self.is_odd() {
            return Ok(0.0);
        }
        let g = |x: f64| x + lambda * self.beta(x) - r;
        let (mut lo, mut hi) = (-RESOLVENT_EDGE, RESOLVENT_EDGE);
        if g(hi) <= 0.0 {
            return Ok(hi);
        }
        if g(lo) >= 0.0 {
            return Ok(lo);
        }
        let mut x = if guess.is_finite() { guess.clamp(lo, hi) } else { r.clamp(lo, hi) };
        let mut last = f64::INFINITY;
        for _ in 0..RESOLVENT_MAX_ITER {
            let gx = g(x);
            if gx == 0.0 {
                return Ok(x);
            }
            if gx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dg = 1.0 + lambda * self.dbeta(x);
            let newton = x - gx / dg;
            let (next, is_newton) = if newton > lo && newton < hi {
                (newton, true)
            } else {
                (0.5 * (lo + hi), false)
            };
            let step = (next - x).abs();
            x = next;
            if is_newton && step <= RESOLVENT_TOL && step <= last {
                // Near ±1 the curvature makes tiny Newton steps possible far
                // from the root; accept only once a sign change brackets x.
                let d = 2.0 * step.max(f64::EPSILON * x.abs());
                let (a, b) = ((x - d).max(lo), (x + d).min(hi));
                let (ga, gb) = (g(a), g(b));
                if ga <= 0.0 && gb >= 0.0 {
                    return Ok(x);
                }
                if ga > 0.0 {
                    hi = a;
                    x = a;
                } else {
                    lo = b;
                    x = b;
                }
            }
            // bracket collapsed to adjacent floats
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
                return Ok(x);
            }
            last = step;
        }
        Err(Error::Convergence {
            what: "resolvent",
            iterations: RESOLVENT_MAX_ITER,
            residual: g(x).abs(),
        })
    }

    pub fn yosida_from(&self, lambda: f64, r: f64, guess: f64) -> Result<Yosida> {
        let j = self.resolvent_from(lambda, r, guess)?;
        let db = self.dbeta(j);
        let dbeta = if db.is_finite() { db / (1.0 + lambda * db) } else { 1.0 / lambda };
        Ok(Yosida { j, beta: (r - j) / lambda, dbeta })
    }

    pub fn yosida(&self, lambda: f64, r: f64) -> Result<Yosida> {
        self.yosida_from(lambda, r, r)
    }

    /// `beta_lambda(r) = (r - J_lambda(r)) / lambda`.
    pub fn yosida_beta(&self, lambda: f64, r: f64) -> Result<f64> {
        Ok(self.yosida(lambda, r)?.beta)
    }

    /// `F_lambda(r) = F(0) + beta_hat_lambda(r) - C_F r^2 / 2` with the Moreau
    /// envelope `beta_hat_lambda(r) = beta_hat(J) + lambda beta_lambda^2 / 2`.
    pub fn moreau_f(&self, lambda: f64, r: f64) -> Result<f64> {
        let y = self.yosida(lambda, r)?;
        let envelope = self.beta_hat(y.j)? + 0.5 * lambda * y.beta * y.beta;
        Ok(self.eval_f(0.0)? + envelope - 0.5 * self.c_f * r * r)
    }

    /// `(r_F, R_F)`. Logarithmic wells sit at `±r*`, `theta atanh r* = theta0 r*`.
    pub fn stationary_points(&self) -> Result<StationaryInterval> {
        match self.kind {
            PotentialKind::Custom => Ok(self.custom_ref().stationary),
            PotentialKind::Logarithmic => {
                let phi = |r: f64| self.theta * r.atanh() - self.theta0 * r;
                // phi(r) ~ (theta - theta0) r + theta r^3 / 3 near zero
                let ratio = 1.0 - self.theta / self.theta0;
                let lo = (1e-3 * ratio.sqrt()).min(0.5);
                let hi = 1.0 - 1e-15;
                let r_star = bisect("stationary point", phi, lo, hi, 0.0).map_err(|_| {
                    Error::config(format!(
                        "degenerate potential: no interior well for theta={}, theta0={}",
                        self.theta, self.theta0
                    ))
                })?;
                StationaryInterval::new(-r_star, r_star)
            }
        }
    }

    /// Sampled check of the standing assumptions on `F`.
    pub fn validate(&self, opts: &ValidationOptions) -> Result<()> {
        if self.kind == PotentialKind::Logarithmic && !(self.theta > 0.0 && self.theta < self.theta0) {
            return Err(Error::config("logarithmic potential needs 0 < theta < theta0"));
        }
        let f0 = self.eval_f(0.0)?;
        if !f0.is_finite() {
            return Err(Error::config("F(0) is not finite"));
        }
        let df0 = self.df_unchecked(0.0);
        if df0.abs() > 1e-12 {
            return Err(Error::config(format!("F'(0) = {df0} is not zero")));
        }
        let edge = 1.0 - 1e-8;
        for x in chebyshev_points(-edge, edge, opts.samples) {
            let d2 = self.d2f_unchecked(x);
            if !(d2 >= -self.c_f - 1e-9) {
                return Err(Error::config(format!(
                    "F''({x}) = {d2} is below -C_F = {}",
                    -self.c_f
                )));
            }
        }
        let (left, right) = (self.df_unchecked(-edge), self.df_unchecked(edge));
        if !(right >= opts.divergence_magnitude && left <= -opts.divergence_magnitude) {
            return Err(Error::config(format!(
                "F' does not diverge at the barriers: F'(-{edge}) = {left}, F'({edge}) = {right}"
            )));
        }
        Ok(())
    }
}

/// `G_sigma(r) = (1 - r^2)^{-sigma}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Barrier {
    pub sigma: u32,
}

impl Barrier {
    pub fn new(sigma: u32) -> Result<Self> {
        if sigma == 0 {
            return Err(Error::config("barrier exponent sigma must be at least 1"));
        }
        Ok(Self { sigma })
    }

    /// `sigma (p - d) > p d`.
    pub fn admissible(&self, p: f64, d: u32) -> bool {
        let d = d as f64;
        self.sigma as f64 * (p - d) > p * d
    }

    pub fn check_admissible(&self, p: f64, d: u32) -> Result<()> {
        if self.admissible(p, d) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "sigma (p - d) > p d fails for sigma={}, p={p}, d={d}",
                self.sigma
            )))
        }
    }

    /// `(G, G', G'')` at `r`.
    pub fn eval(&self, r: f64) -> Result<(f64, f64, f64)> {
        if !(r.is_finite() && r.abs() < 1.0) {
            return Err(Error::Domain { what: "G_sigma", value: r });
        }
        let s = self.sigma as f64;
        let q = 1.0 - r * r;
        let g = q.powi(-(self.sigma as i32));
        let dg = 2.0 * s * r * g / q;
        let d2g = 2.0 * s * ((2.0 * s + 1.0) * r * r + 1.0) * g / (q * q);
        Ok((g, dg, d2g))
    }

    /// `G(r)`, `+inf` for `|r| >= 1`.
    pub fn g(&self, r: f64) -> f64 {
        if r.abs() >= 1.0 {
            f64::INFINITY
        } else {
            (1.0 - r * r).powi(-(self.sigma as i32))
        }
    }

    /// `G'(r)`, no domain check.
    pub fn dg(&self, r: f64) -> f64 {
        let q = 1.0 - r * r;
        2.0 * self.sigma as f64 * r * q.powi(-(self.sigma as i32) - 1)
    }
}

//! Uniform 1-D Dirichlet mesh on `(0, ℓ)` with the conservative two-point
//! flux discretization of `Δ_p` and trapezoid quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Barrier;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    pub length: f64,
    pub n_interior: usize,
    pub spacing: f64,
}

/// Nodal values of `u` at the interior nodes; zero boundary values implied.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Field {
    pub values: Vec<f64>,
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl std::ops::Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    /// `max_i |u_i|`; the boundary contributes 0.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect() }
    }
}

pub fn sup_norm(u: &[f64]) -> f64 {
    u.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Flux `γ_p(g) = |g|^{p-2} g`.
#[inline]
pub fn gamma_p(p: f64, g: f64) -> f64 {
    if p == 2.0 {
        g
    } else {
        g.abs().powf(p - 2.0) * g
    }
}

/// `γ_p'(g) = (p - 1)|g|^{p-2}`.
#[inline]
pub fn dgamma_p(p: f64, g: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        (p - 1.0) * g.abs().powf(p - 2.0)
    }
}

impl Mesh1D {
    pub fn new(length: f64, n_interior: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config(format!("domain_length must be positive, got {length}")));
        }
        if n_interior == 0 {
            return Err(Error::config("n_interior must be at least 1"));
        }
        Ok(Self { length, n_interior, spacing: length / (n_interior as f64 + 1.0) })
    }

    /// Interior node coordinates `x_i = i h`, `i = 1..=N`.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n_interior).map(move |i| i as f64 * self.spacing)
    }

    pub fn field_from_fn(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { values: self.nodes().map(f).collect() }
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.n_interior {
            Ok(())
        } else {
            Err(Error::Shape { expected: self.n_interior, got: u.len() })
        }
    }

    /// Face gradients `g_{i+1/2}`, `N + 1` of them, boundary values zero.
    pub fn face_gradients(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let at = |i: usize| if i == 0 || i > n { 0.0 } else { u[i - 1] };
        (0..=n).map(|f| (at(f + 1) - at(f)) / self.spacing).collect()
    }

    pub fn p_laplacian(&self, p: f64, u: &Field) -> Result<Field> {
        self.check(u)?;
        let mut out = vec![0.0; u.len()];
        self.p_laplacian_into(p, u, &mut out);
        Ok(out.into())
    }

    /// `(Δ_p u)_i = (γ_p(g_{i+1/2}) - γ_p(g_{i-1/2})) / h`, written into `out`.
    pub fn p_laplacian_into(&self, p: f64, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let h = self.spacing;
        let mut left = gamma_p(p, u.first().copied().unwrap_or(0.0) / h);
        for i in 0..n {
            let next = if i + 1 < n { u[i + 1] } else { 0.0 };
            let right = gamma_p(p, (next - u[i]) / h);
            out[i] = (right - left) / h;
            left = right;
        }
    }

    /// Tridiagonal Jacobian of `-Δ_p` at `u`: `(sub, diag, sup)`, with
    /// `sub[0]` and `sup[N-1]` unused.
    pub fn neg_p_laplacian_jacobian(&self, p: f64, u: &[f64], sub: &mut [f64], diag: &mut [f64], sup: &mut [f64]) {
        let n = u.len();
        let h = self.spacing;
        let h2 = h * h;
        let mut left = dgamma_p(p, u.first().copied().unwrap_or(0.0) / h);
        for i in 0..n {
            let next = if i + 1 < n { u[i + 1] } else { 0.0 };
            let right = dgamma_p(p, (next - u[i]) / h);
            diag[i] = (left + right) / h2;
            sub[i] = -left / h2;
            sup[i] = -right / h2;
            left = right;
        }
    }

    /// Discrete `‖∇u‖_{L^p}^p = Σ_faces |g|^p h`.
    pub fn vp_norm_p(&self, p: f64, u: &[f64]) -> f64 {
        self.face_gradients(u).iter().map(|g| g.abs().powf(p)).sum::<f64>() * self.spacing
    }

    /// `h Σ f_i`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.spacing
    }

    /// Quadrature inner product `h Σ u_i v_i`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * self.spacing
    }

    /// Discrete `L^2` norm.
    pub fn h_norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// `∫ G_ς(u)` with the boundary half-cells included at `G_ς(0) = 1`;
    /// `+inf` once any node reaches `|u| >= 1`.
    pub fn g_functional(&self, barrier: &Barrier, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &v in u {
            let g = barrier.g(v);
            if g.is_infinite() {
                return f64::INFINITY;
            }
            acc += g;
        }
        self.spacing * (acc + 1.0)
    }
}

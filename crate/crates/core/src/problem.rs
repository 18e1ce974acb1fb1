//! Everything one trajectory needs, validated together.

use crate::error::{Error, Result};
use crate::grid::{Field, Mesh1D};
use crate::noise::NoiseSpec;
use crate::potential::{Barrier, PotentialSpec, StationaryInterval, ValidationOptions};
use crate::solver::SolverConfig;

/// Spatial dimension; the discretization is one-dimensional.
pub const DIM: u32 = 1;

#[derive(Clone, Debug)]
pub struct Problem {
    pub potential: PotentialSpec,
    pub noise: NoiseSpec,
    pub barrier: Barrier,
    pub mesh: Mesh1D,
    pub solver: SolverConfig,
    pub delta0: f64,
    pub u0: Field,
    pub stationary: StationaryInterval,
}

/// `u0(x) = (1 - δ₀) sin(πx/ℓ)` rescaled so that its largest nodal value is
/// exactly `1 - δ₀`.
pub fn sine_initial(mesh: &Mesh1D, delta0: f64) -> Field {
    let raw = mesh.field_from_fn(|x| (std::f64::consts::PI * x / mesh.length).sin());
    let peak = raw.sup_norm();
    let amp = 1.0 - delta0;
    Field { values: raw.iter().map(|v| amp * v / peak).collect() }
}

impl Problem {
    pub fn new(
        potential: PotentialSpec,
        noise: NoiseSpec,
        mesh: Mesh1D,
        solver: SolverConfig,
        delta0: f64,
    ) -> Result<Self> {
        if !(delta0 > 0.0 && delta0 < 1.0) {
            return Err(Error::config(format!("delta0 must lie in (0, 1), got {delta0}")));
        }
        let u0 = sine_initial(&mesh, delta0);
        Self::with_initial(potential, noise, mesh, solver, delta0, u0)
    }

    /// Custom initial profile; `‖u0‖_∞` must equal `1 - δ₀`.
    pub fn with_initial(
        potential: PotentialSpec,
        noise: NoiseSpec,
        mesh: Mesh1D,
        solver: SolverConfig,
        delta0: f64,
        u0: Field,
    ) -> Result<Self> {
        solver.validate()?;
        potential.validate(&ValidationOptions::default())?;
        let barrier = Barrier::new(noise.sigma)?;
        barrier.check_admissible(solver.p, DIM)?;
        if u0.len() != mesh.n_interior {
            return Err(Error::Shape { expected: mesh.n_interior, got: u0.len() });
        }
        if !u0.is_finite() {
            return Err(Error::config("initial condition has non-finite entries"));
        }
        let sup = u0.sup_norm();
        if (sup - (1.0 - delta0)).abs() > 1e-12 {
            return Err(Error::config(format!(
                "initial condition has sup norm {sup}, expected 1 - delta0 = {}",
                1.0 - delta0
            )));
        }
        let stationary = potential.stationary_points()?;
        Ok(Self { potential, noise, barrier, mesh, solver, delta0, u0, stationary })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Ok(Self { noise: self.noise.with_epsilon(epsilon)?, ..self.clone() })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let solver = SolverConfig { lambda, ..self.solver };
        solver.validate()?;
        Ok(Self { solver, ..self.clone() })
    }

    /// `max{|r_F|, |R_F|} <= 1 - δ₀`: the wells lie inside the initial range.
    pub fn wells_inside_initial_range(&self) -> bool {
        self.stationary.max_abs() <= 1.0 - self.delta0
    }
}

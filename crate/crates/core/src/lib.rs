//! Numerical laboratory for the stochastic p-Laplace Allen-Cahn equation
//!
//! ```text
//!   du - Δ_p u dt + F'(u) dt = √ε H(u) dW     in (0,T) × (0,ℓ),   u = 0 on the boundary,
//! ```
//!
//! with a singular (logarithmic) double-well potential `F` on `(-1,1)` and a
//! degenerate multiplicative noise whose coefficients vanish at `±1`.
//!
//! The singular drift is handled through its Yosida approximation: each time
//! step is a backward-Euler solve of the monotone part `-Δ_p + β_λ` with the
//! concave part `-C_F u` and the noise treated explicitly. Along every
//! trajectory the crate records the separation layer `Λ = 1 - sup|u|`, the
//! barrier functional `∫ G_ς(u)`, the `V_p` energy and the two martingales
//! that drive the pathwise bounds, so the theoretical constants and tail
//! bounds in [`analysis`] can be compared against Monte Carlo ensembles.
//!
//! Module map:
//! - [`potential`]: `F`, `β`, resolvent `J_λ`, Yosida `β_λ`, Moreau envelope `F_λ`, barrier `G_ς`.
//! - [`noise`]: coefficient family `h_k`, `H_λ = H ∘ J_λ`, keyed Wiener increments.
//! - [`grid`]: 1-D Dirichlet mesh, discrete p-Laplacian, quadrature and norms.
//! - [`solver`]: semi-implicit Euler-Maruyama stepping and per-path monitors.
//! - [`analysis`]: explicit constant chain, tail and Bernstein bounds, tail fits.
//! - [`ensemble`]: parallel Monte Carlo, ε-sweeps.
//! - [`config`], [`cli`]: JSON configuration and the `stochsep` command line.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod grid;
pub mod noise;
pub mod potential;
pub mod problem;
pub mod solver;

pub(crate) mod numeric;

pub use error::{Error, Result};
pub use grid::{Field, Mesh1D};
pub use noise::{NoiseKind, NoiseSpec, WienerIncrement};
pub use potential::{Barrier, PotentialKind, PotentialSpec, StationaryInterval};
pub use problem::Problem;
pub use solver::{PathRecord, SolverConfig};

//! Semi-implicit Euler-Maruyama for the Yosida-regularized equation
//!
//! ```text
//!   u⁺ - Δt Δ_p u⁺ + Δt β_λ(u⁺) = u + Δt C_F u + √ε Σ_k h_k(J_λ(u)) ΔW_k
//! ```
//!
//! and the per-path monitors: running sup, `∫G_ς(u)`, `‖∇u‖_p^p`, the
//! martingales `M₁ = ∫(G_ς'(u), H_λ dW)`, `M₂ = ∫(-Δ_p u, H_λ dW)` with their
//! quadratic variations, and the dissipation `∫‖Δ_p u‖²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{sup_norm, Field, Mesh1D};
use crate::noise::{IncrementSource, Keyed, NoiseSpec};
use crate::potential::{Barrier, PotentialSpec};
use crate::problem::Problem;

fn default_newton_tol() -> f64 {
    1e-12
}
fn default_newton_max_iter() -> usize {
    50
}
fn default_record_stride() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub t_final: f64,
    pub dt: f64,
    pub lambda: f64,
    pub p: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
}

impl SolverConfig {
    pub fn new(t_final: f64, dt: f64, lambda: f64, p: f64) -> Self {
        Self {
            t_final,
            dt,
            lambda,
            p,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
            record_stride: default_record_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.dt > 0.0 && self.dt < self.t_final) {
            return bad(format!("dt must lie in (0, t_final), got {}", self.dt));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.newton_max_iter == 0 || self.record_stride == 0 {
            return bad("newton_max_iter and record_stride must be at least 1".into());
        }
        Ok(())
    }

    /// `⌈T / Δt⌉`, tolerant of the rounding in `T / Δt`.
    pub fn n_steps(&self) -> usize {
        let ratio = self.t_final / self.dt;
        let near = ratio.round();
        if (ratio - near).abs() <= 1e-9 * near.max(1.0) {
            near as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// One trajectory's monitors. Histories are sampled every `record_stride`
/// steps and always include `t = 0` and the final step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub seed: u64,
    pub path_id: u64,
    pub epsilon: f64,
    /// `Λ = 1 - sup_trajectory`
    pub lambda_layer: f64,
    /// max over all steps and nodes of `|u|`, including `u0`
    pub sup_trajectory: f64,
    pub separation_violated: bool,
    pub steps_completed: usize,
    pub max_newton_iterations: usize,
    pub times: Vec<f64>,
    pub sup_history: Vec<f64>,
    pub g_history: Vec<f64>,
    pub vp_history: Vec<f64>,
    pub m1_history: Vec<f64>,
    pub m2_history: Vec<f64>,
    pub qv1_history: Vec<f64>,
    pub qv2_history: Vec<f64>,
    pub dissipation_history: Vec<f64>,
    pub qv1: f64,
    pub qv2: f64,
    pub dissipation: f64,
    #[serde(skip)]
    pub snapshots: Vec<(f64, Field)>,
}

impl PathRecord {
    fn new(seed: u64, path_id: u64, epsilon: f64) -> Self {
        Self {
            seed,
            path_id,
            epsilon,
            lambda_layer: f64::NAN,
            sup_trajectory: 0.0,
            separation_violated: false,
            steps_completed: 0,
            max_newton_iterations: 0,
            times: Vec::new(),
            sup_history: Vec::new(),
            g_history: Vec::new(),
            vp_history: Vec::new(),
            m1_history: Vec::new(),
            m2_history: Vec::new(),
            qv1_history: Vec::new(),
            qv2_history: Vec::new(),
            dissipation_history: Vec::new(),
            qv1: 0.0,
            qv2: 0.0,
            dissipation: 0.0,
            snapshots: Vec::new(),
        }
    }

    pub fn max_m1(&self) -> f64 {
        self.m1_history.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_m2(&self) -> f64 {
        self.m2_history.iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_g(&self) -> f64 {
        self.g_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_vp(&self) -> f64 {
        self.vp_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Drops the histories, keeping the scalar summary.
    pub fn compact(mut self) -> Self {
        for h in [
            &mut self.times,
            &mut self.sup_history,
            &mut self.g_history,
            &mut self.vp_history,
            &mut self.m1_history,
            &mut self.m2_history,
            &mut self.qv1_history,
            &mut self.qv2_history,
            &mut self.dissipation_history,
        ] {
            let last = h.last().copied();
            h.clear();
            h.extend(last);
        }
        self.snapshots.clear();
        self
    }
}

/// Optional outputs of [`run_path_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep the full field every `snapshot_stride` steps; 0 disables.
    pub snapshot_stride: usize,
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = if n > 1 { sup[0] / diag[0] } else { 0.0 };
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

#[derive(Clone, Debug)]
struct Buffers {
    lap: Vec<f64>,
    res: Vec<f64>,
    dbeta: Vec<f64>,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    delta: Vec<f64>,
    scratch: Vec<f64>,
    trial: Vec<f64>,
    trial_j: Vec<f64>,
    trial_res: Vec<f64>,
    trial_dbeta: Vec<f64>,
}

impl Buffers {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            lap: z(),
            res: z(),
            dbeta: z(),
            sub: z(),
            diag: z(),
            sup: z(),
            delta: z(),
            scratch: z(),
            trial: z(),
            trial_j: z(),
            trial_res: z(),
            trial_dbeta: z(),
        }
    }
}

/// Implicit solver for one time step; owns its workspace.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    potential: &'a PotentialSpec,
    mesh: &'a Mesh1D,
    cfg: SolverConfig,
    buf: Buffers,
}

impl<'a> Stepper<'a> {
    pub fn new(potential: &'a PotentialSpec, mesh: &'a Mesh1D, cfg: SolverConfig) -> Self {
        Self { potential, mesh, cfg, buf: Buffers::new(mesh.n_interior) }
    }

    pub fn for_problem(problem: &'a Problem) -> Self {
        Self::new(&problem.potential, &problem.mesh, problem.solver)
    }

    /// `R(v) = v - Δt Δ_p v + Δt β_λ(v) - rhs`; returns `‖R‖_∞`. `j` holds
    /// resolvent warm starts on entry and `J_λ(v)` on exit.
    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        v: &[f64],
        rhs: &[f64],
        j: &mut [f64],
        lap: &mut [f64],
        res: &mut [f64],
        dbeta: &mut [f64],
    ) -> Result<f64> {
        let dt = self.cfg.dt;
        let lambda = self.cfg.lambda;
        self.mesh.p_laplacian_into(self.cfg.p, v, lap);
        let mut worst = 0.0_f64;
        for i in 0..v.len() {
            let y = self.potential.yosida_from(lambda, v[i], j[i])?;
            j[i] = y.j;
            dbeta[i] = y.dbeta;
            res[i] = v[i] - dt * lap[i] + dt * y.beta - rhs[i];
            worst = worst.max(res[i].abs());
        }
        if !worst.is_finite() {
            return Err(Error::Convergence { what: "implicit step", iterations: 0, residual: worst });
        }
        Ok(worst)
    }

    /// Solves the implicit step for right-hand side `rhs`, starting from `v`
    /// (overwritten with the solution). `j` carries `J_λ` warm starts in and
    /// `J_λ(u⁺)` out. Returns the Newton iteration count.
    pub fn solve(&mut self, v: &mut [f64], j: &mut [f64], rhs: &[f64]) -> Result<usize> {
        let n = v.len();
        let dt = self.cfg.dt;
        let p = self.cfg.p;
        let tol = self.cfg.newton_tol;
        let mut buf = std::mem::replace(&mut self.buf, Buffers::new(0));
        let out = (|| {
            let mut r = self.residual(v, rhs, j, &mut buf.lap, &mut buf.res, &mut buf.dbeta)?;
            for iter in 0..self.cfg.newton_max_iter {
                if r <= tol {
                    return Ok(iter);
                }
                self.mesh.neg_p_laplacian_jacobian(p, v, &mut buf.sub, &mut buf.diag, &mut buf.sup);
                for i in 0..n {
                    buf.sub[i] *= dt;
                    buf.sup[i] *= dt;
                    buf.diag[i] = 1.0 + dt * buf.diag[i] + dt * buf.dbeta[i];
                    buf.delta[i] = -buf.res[i];
                }
                thomas(&buf.sub, &buf.diag, &buf.sup, &mut buf.delta, &mut buf.scratch);
                let mut alpha = 1.0;
                loop {
                    for i in 0..n {
                        buf.trial[i] = v[i] + alpha * buf.delta[i];
                    }
                    buf.trial_j.copy_from_slice(j);
                    let rt = self.residual(
                        &buf.trial,
                        rhs,
                        &mut buf.trial_j,
                        &mut buf.lap,
                        &mut buf.trial_res,
                        &mut buf.trial_dbeta,
                    )?;
                    if rt < r {
                        v.copy_from_slice(&buf.trial);
                        j.copy_from_slice(&buf.trial_j);
                        std::mem::swap(&mut buf.res, &mut buf.trial_res);
                        std::mem::swap(&mut buf.dbeta, &mut buf.trial_dbeta);
                        r = rt;
                        break;
                    }
                    alpha *= 0.5;
                    if alpha < 1e-12 {
                        return Err(Error::Convergence {
                            what: "implicit step line search",
                            iterations: iter + 1,
                            residual: r,
                        });
                    }
                }
            }
            if r <= tol {
                Ok(self.cfg.newton_max_iter)
            } else {
                Err(Error::Convergence {
                    what: "implicit step",
                    iterations: self.cfg.newton_max_iter,
                    residual: r,
                })
            }
        })();
        self.buf = buf;
        out
    }

    /// One deterministic-drift step from `u` with a precomputed noise field
    /// `xi = √ε H_λ(u) ΔW`.
    pub fn step_with_noise(&mut self, u: &Field, xi: &[f64]) -> Result<Field> {
        if u.len() != self.mesh.n_interior || xi.len() != u.len() {
            return Err(Error::Shape { expected: self.mesh.n_interior, got: u.len().min(xi.len()) });
        }
        if !u.is_finite() {
            return Err(Error::Domain { what: "step state", value: f64::NAN });
        }
        let c = 1.0 + self.cfg.dt * self.potential.c_f;
        let rhs: Vec<f64> = u.iter().zip(xi).map(|(a, x)| c * a + x).collect();
        let mut v = u.values.clone();
        let mut j = u.values.clone();
        self.solve(&mut v, &mut j, &rhs)?;
        Ok(v.into())
    }
}

/// `u⁺` from `u` and the mode increments `dw`.
pub fn step(problem: &Problem, u: &Field, dw: &[f64]) -> Result<Field> {
    let xi = problem.noise.apply_h_lambda(
        &problem.potential,
        problem.solver.lambda,
        u,
        &crate::noise::WienerIncrement { dt: problem.solver.dt, values: dw.to_vec() },
    )?;
    Stepper::for_problem(problem).step_with_noise(u, &xi)
}

/// Discrete energy `‖∇u‖_p^p / p + h Σ F_λ(u_i)`.
pub fn energy(problem: &Problem, u: &[f64]) -> Result<f64> {
    let p = problem.solver.p;
    let mut f = 0.0;
    for &v in u {
        f += problem.potential.moreau_f(problem.solver.lambda, v)?;
    }
    Ok(problem.mesh.vp_norm_p(p, u) / p + problem.mesh.spacing * f)
}

/// Per-step noise field and martingale increments at the pre-step state.
struct NoiseWork {
    dw: Vec<f64>,
    h: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NoiseWork {
    fn new(k: usize) -> Self {
        Self { dw: vec![0.0; k], h: vec![0.0; k], a: vec![0.0; k], b: vec![0.0; k] }
    }

    /// Fills `xi` and returns `(dM₁, d[M₁], dM₂, d[M₂])`.
    #[allow(clippy::too_many_arguments)]
    fn apply(
        &mut self,
        noise: &NoiseSpec,
        barrier: &Barrier,
        h_mesh: f64,
        dt: f64,
        u: &[f64],
        j: &[f64],
        lap: &[f64],
        xi: &mut [f64],
    ) -> (f64, f64, f64, f64) {
        let eps = noise.epsilon;
        let amp = eps.sqrt();
        self.a.fill(0.0);
        self.b.fill(0.0);
        for i in 0..u.len() {
            noise.h_all(j[i], &mut self.h);
            let gp = barrier.dg(u[i]);
            let nl = -lap[i];
            let mut s = 0.0;
            for k in 0..self.h.len() {
                let hk = self.h[k];
                s += hk * self.dw[k];
                self.a[k] += gp * hk;
                self.b[k] += nl * hk;
            }
            xi[i] = amp * s;
        }
        let (mut dm1, mut dq1, mut dm2, mut dq2) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..self.dw.len() {
            let ak = h_mesh * self.a[k];
            let bk = h_mesh * self.b[k];
            dm1 += ak * self.dw[k];
            dm2 += bk * self.dw[k];
            dq1 += ak * ak;
            dq2 += bk * bk;
        }
        (amp * dm1, eps * dt * dq1, amp * dm2, eps * dt * dq2)
    }
}

/// Trajectory from the problem's `u0` with the keyed increments of `(seed, path_id)`.
pub fn run_path(problem: &Problem, seed: u64, path_id: u64) -> Result<PathRecord> {
    run_path_with(problem, &problem.u0, &Keyed { seed, path_id }, seed, path_id, RunOptions::default())
}

/// Trajectory from `u0` driven by `source`. A step that reaches `|u| >= 1`
/// sets `separation_violated` and ends the path.
pub fn run_path_with<S: IncrementSource + ?Sized>(
    problem: &Problem,
    u0: &Field,
    source: &S,
    seed: u64,
    path_id: u64,
    opts: RunOptions,
) -> Result<PathRecord> {
    let mesh = &problem.mesh;
    let cfg = problem.solver;
    let n = mesh.n_interior;
    if u0.len() != n {
        return Err(Error::Shape { expected: n, got: u0.len() });
    }
    let sup0 = u0.sup_norm();
    if !(sup0 < 1.0) {
        return Err(Error::Domain { what: "initial condition sup norm", value: sup0 });
    }
    let noise = &problem.noise;
    let noisy = noise.epsilon > 0.0;
    let n_steps = cfg.n_steps();
    let stride = cfg.record_stride;
    let h = mesh.spacing;
    let c = 1.0 + cfg.dt * problem.potential.c_f;

    let mut rec = PathRecord::new(seed, path_id, noise.epsilon);
    let mut stepper = Stepper::for_problem(problem);
    let mut work = NoiseWork::new(noise.n_modes);

    let mut u = u0.values.clone();
    let mut j = u.clone();
    let mut lap = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut j_next = vec![0.0; n];
    mesh.p_laplacian_into(cfg.p, &u, &mut lap);

    let (mut m1, mut m2) = (0.0, 0.0);
    let mut sup = sup0;

    let record = |rec: &mut PathRecord, t: f64, u: &[f64], sup: f64, m1: f64, m2: f64| {
        rec.times.push(t);
        rec.sup_history.push(sup);
        rec.g_history.push(mesh.g_functional(&problem.barrier, u));
        rec.vp_history.push(mesh.vp_norm_p(cfg.p, u));
        rec.m1_history.push(m1);
        rec.m2_history.push(m2);
        rec.qv1_history.push(rec.qv1);
        rec.qv2_history.push(rec.qv2);
        rec.dissipation_history.push(rec.dissipation);
    };
    record(&mut rec, 0.0, &u, sup, m1, m2);
    if opts.snapshot_stride > 0 {
        rec.snapshots.push((0.0, u0.clone()));
    }

    for step_index in 0..n_steps {
        for i in 0..n {
            j[i] = problem.potential.resolvent_from(cfg.lambda, u[i], j[i])?;
        }
        if noisy {
            source.fill(step_index as u64, cfg.dt, &mut work.dw);
            let (dm1, dq1, dm2, dq2) =
                work.apply(noise, &problem.barrier, h, cfg.dt, &u, &j, &lap, &mut xi);
            m1 += dm1;
            m2 += dm2;
            rec.qv1 += dq1;
            rec.qv2 += dq2;
        }
        for i in 0..n {
            rhs[i] = c * u[i] + xi[i];
        }
        next.copy_from_slice(&u);
        j_next.copy_from_slice(&j);
        let iters = stepper.solve(&mut next, &mut j_next, &rhs)?;
        rec.max_newton_iterations = rec.max_newton_iterations.max(iters);
        std::mem::swap(&mut u, &mut next);
        std::mem::swap(&mut j, &mut j_next);
        mesh.p_laplacian_into(cfg.p, &u, &mut lap);
        rec.dissipation += cfg.dt * h * lap.iter().map(|v| v * v).sum::<f64>();

        let s = sup_norm(&u);
        sup = sup.max(s);
        rec.steps_completed = step_index + 1;
        let t = (step_index + 1) as f64 * cfg.dt;
        let violated = !(s < 1.0);
        if violated || (step_index + 1) % stride == 0 || step_index + 1 == n_steps {
            record(&mut rec, t, &u, sup, m1, m2);
        }
        if opts.snapshot_stride > 0 && (step_index + 1) % opts.snapshot_stride == 0 {
            rec.snapshots.push((t, u.clone().into()));
        }
        if violated {
            rec.separation_violated = true;
            break;
        }
    }
    rec.sup_trajectory = sup;
    rec.lambda_layer = 1.0 - sup;
    Ok(rec)
}

/// `max_n ‖u_a^n - u_b^n‖_H` between consecutive problems of `levels`, all
/// driven by the same increments from the same `u0`.
pub fn lockstep_distances<S: IncrementSource + ?Sized>(levels: &[Problem], source: &S) -> Result<Vec<f64>> {
    let Some(first) = levels.first() else {
        return Ok(Vec::new());
    };
    let mesh = &first.mesh;
    let n = mesh.n_interior;
    let cfg0 = first.solver;
    for lv in levels {
        if lv.mesh != *mesh || lv.solver.dt != cfg0.dt || lv.solver.n_steps() != cfg0.n_steps() {
            return Err(Error::config("lockstep levels must share mesh and time grid"));
        }
    }
    let k = first.noise.n_modes;
    let mut dw = vec![0.0; k];
    let mut hbuf = vec![0.0; k];
    let mut states: Vec<Vec<f64>> = levels.iter().map(|l| l.u0.values.clone()).collect();
    let mut js = states.clone();
    let mut steppers: Vec<Stepper<'_>> = levels.iter().map(Stepper::for_problem).collect();
    let mut dist = vec![0.0_f64; levels.len().saturating_sub(1)];
    let mut rhs = vec![0.0; n];
    let mut diff = vec![0.0; n];
    for step_index in 0..cfg0.n_steps() {
        source.fill(step_index as u64, cfg0.dt, &mut dw);
        for (l, lv) in levels.iter().enumerate() {
            let amp = lv.noise.epsilon.sqrt();
            let c = 1.0 + lv.solver.dt * lv.potential.c_f;
            let (u, j) = (&mut states[l], &mut js[l]);
            for i in 0..n {
                j[i] = lv.potential.resolvent_from(lv.solver.lambda, u[i], j[i])?;
                let xi = if amp > 0.0 {
                    lv.noise.h_all(j[i], &mut hbuf);
                    amp * hbuf.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    0.0
                };
                rhs[i] = c * u[i] + xi;
            }
            steppers[l].solve(u, j, &rhs)?;
        }
        for (l, d) in dist.iter_mut().enumerate() {
            for i in 0..n {
                diff[i] = states[l][i] - states[l + 1][i];
            }
            *d = d.max(mesh.h_norm(&diff));
        }
    }
    Ok(dist)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaStudy {
    pub lambdas: Vec<f64>,
    /// `errors[path][j] = max_n ‖u_{λ_j} - u_{λ_{j+1}}‖_H`
    pub errors: Vec<Vec<f64>>,
    /// per path, mean of `log₂(e_j / e_{j+1})`
    pub path_rates: Vec<f64>,
    pub mean_rate: f64,
}

/// Runs `λ_j = base_lambda 2^{-j}`, `j = 0..=levels`, in lockstep with matched
/// noise for every path id.
pub fn lambda_convergence_study(
    problem: &Problem,
    base_lambda: f64,
    levels: usize,
    seed: u64,
    path_ids: &[u64],
    exec: Execution,
) -> Result<LambdaStudy> {
    if levels < 2 {
        return Err(Error::config("the lambda study needs at least two halvings"));
    }
    let lambdas: Vec<f64> = (0..=levels).map(|j| base_lambda * 0.5f64.powi(j as i32)).collect();
    let problems = lambdas.iter().map(|&l| problem.with_lambda(l)).collect::<Result<Vec<_>>>()?;
    let errors = exec
        .map(path_ids, |&path_id| lockstep_distances(&problems, &Keyed { seed, path_id }))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let path_rates: Vec<f64> = errors
        .iter()
        .map(|e| {
            let logs: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            logs.iter().sum::<f64>() / logs.len() as f64
        })
        .collect();
    let mean_rate = path_rates.iter().sum::<f64>() / path_rates.len().max(1) as f64;
    Ok(LambdaStudy { lambdas, errors, path_rates, mean_rate })
}

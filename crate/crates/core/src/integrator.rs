//! External forces, the momentum step, and the reference implicit Euler solver.

use nalgebra::{DMatrix, DVector};

use crate::elastic::{internal_hessian, total_internal, InversionPolicy};
use crate::mesh::{Mesh, SimState};
use crate::velocity_projection::{angular_momentum, linear_momentum};
use crate::{Error, Result, Vec3};

/// Penalty obstacle. `stiffness` is in N/m.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Obstacle {
    /// Free side is `normal . x >= offset`.
    HalfSpace {
        normal: Vec3,
        offset: f64,
        stiffness: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
        stiffness: f64,
    },
}

impl Obstacle {
    /// Signed distance and its gradient.
    fn distance(&self, x: &Vec3) -> (f64, Vec3) {
        match *self {
            Obstacle::HalfSpace { normal, offset, .. } => (normal.dot(x) - offset, normal),
            Obstacle::Sphere { center, radius, .. } => {
                let d = x - center;
                let r = d.norm();
                let n = if r > 0.0 { d / r } else { Vec3::z() };
                (r - radius, n)
            }
        }
    }

    fn stiffness(&self) -> f64 {
        match *self {
            Obstacle::HalfSpace { stiffness, .. } | Obstacle::Sphere { stiffness, .. } => stiffness,
        }
    }

    fn force(&self, x: &Vec3) -> Vec3 {
        let (phi, n) = self.distance(x);
        if phi < 0.0 {
            n * (-phi * self.stiffness())
        } else {
            Vec3::zeros()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExternalForces {
    /// m/s^2
    pub gravity: Vec3,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// Per-vertex force in N.
    #[serde(default)]
    pub extra: Option<Vec<Vec3>>,
}

impl ExternalForces {
    pub fn none() -> ExternalForces {
        ExternalForces::default()
    }

    pub fn gravity(g: Vec3) -> ExternalForces {
        ExternalForces {
            gravity: g,
            ..Default::default()
        }
    }

    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        for o in &self.obstacles {
            if !(o.stiffness() >= 0.0) {
                return Err(Error::InvalidArgument(
                    "obstacle stiffness must be non-negative".into(),
                ));
            }
            if let Obstacle::HalfSpace { normal, .. } = o {
                if (normal.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(
                        "half-space normal must be unit length".into(),
                    ));
                }
            }
        }
        if let Some(extra) = &self.extra {
            if extra.len() != n_vertices {
                return Err(Error::InvalidArgument(format!(
                    "{} extra forces for {n_vertices} vertices",
                    extra.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-vertex external force at the current positions. Pinned vertices get zero.
pub fn eval_external(mesh: &Mesh, state: &SimState, forces: &ExternalForces) -> Vec<Vec3> {
    let pinned = mesh.pinned();
    mesh.masses()
        .iter()
        .zip(&state.positions)
        .enumerate()
        .map(|(i, (m, x))| {
            if pinned[i] {
                return Vec3::zeros();
            }
            let mut f = forces.gravity * *m;
            for o in &forces.obstacles {
                f += o.force(x);
            }
            if let Some(extra) = &forces.extra {
                f += extra[i];
            }
            f
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepConfig {
    /// s
    pub dt: f64,
    /// Threshold on the infinity norm of the potential gradient.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Backtracking factor in (0, 1).
    pub line_search_shrink: f64,
}

impl StepConfig {
    /// Tolerance scaled by the inertial term: `1e-8 * M_total / dt^2`.
    pub fn for_mesh(mesh: &Mesh, dt: f64) -> StepConfig {
        StepConfig {
            dt,
            newton_tol: 1e-8 * mesh.total_mass() / (dt * dt),
            newton_max_iters: 100,
            line_search_shrink: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.newton_tol > 0.0 && self.newton_max_iters > 0) {
            return Err(Error::InvalidArgument(
                "dt, newton_tol and newton_max_iters must be positive".into(),
            ));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::InvalidArgument(
                "line_search_shrink must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// `x + dt v + dt^2 f / m`; pinned vertices stay put.
pub fn momentum_step(mesh: &Mesh, state: &SimState, f_ext: &[Vec3], dt: f64) -> Vec<Vec3> {
    let pinned = mesh.pinned();
    (0..state.len())
        .map(|i| {
            let x = state.positions[i];
            if pinned[i] {
                x
            } else {
                x + state.velocities[i] * dt + f_ext[i] * (dt * dt / mesh.masses()[i])
            }
        })
        .collect()
}

fn mask_pinned(mesh: &Mesh, gradient: &mut [Vec3]) {
    for (g, &p) in gradient.iter_mut().zip(mesh.pinned()) {
        if p {
            *g = Vec3::zeros();
        }
    }
}

/// `|x - x_m|_M^2 / (2 dt^2) + E_int(x)` and its gradient (pinned entries zeroed).
pub fn modified_potential(
    mesh: &Mesh,
    x: &[Vec3],
    x_m: &[Vec3],
    dt: f64,
    policy: InversionPolicy,
) -> Result<(f64, Vec<Vec3>)> {
    let mut e = total_internal(mesh, x, policy)?;
    let inv = 1.0 / (dt * dt);
    for i in 0..x.len() {
        let d = x[i] - x_m[i];
        let m = mesh.masses()[i];
        e.value += 0.5 * inv * m * d.norm_squared();
        e.gradient[i] += d * (inv * m);
    }
    mask_pinned(mesh, &mut e.gradient);
    Ok((e.value, e.gradient))
}

/// Single-stage implicit Euler potential
/// `|x - x_i - dt v_i|_M^2 / (2 dt^2) + E_int(x) - f_ext . x`.
pub fn implicit_euler_potential(
    mesh: &Mesh,
    state: &SimState,
    f_ext: &[Vec3],
    x: &[Vec3],
    dt: f64,
) -> Result<(f64, Vec<Vec3>)> {
    let mut e = total_internal(mesh, x, InversionPolicy::Strict)?;
    let inv = 1.0 / (dt * dt);
    for i in 0..x.len() {
        let d = x[i] - state.positions[i] - state.velocities[i] * dt;
        let m = mesh.masses()[i];
        e.value += 0.5 * inv * m * d.norm_squared() - f_ext[i].dot(&x[i]);
        e.gradient[i] += d * (inv * m) - f_ext[i];
    }
    mask_pinned(mesh, &mut e.gradient);
    Ok((e.value, e.gradient))
}

/// Convergence record of one minimisation.
#[derive(Debug, Clone, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub grad_norm: f64,
    /// Potential value at each iterate, starting point first.
    pub values: Vec<f64>,
    /// Iterations that fell back to the gradient direction.
    pub fallbacks: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn grad_inf(g: &[Vec3]) -> f64 {
    g.iter().map(|v| v.amax()).fold(0.0, f64::max)
}

/// Damped Newton on a potential whose Hessian is `mass_scale * M + H_int`.
/// Trial points that invert an element count as infinitely expensive.
fn minimize(
    mesh: &Mesh,
    x0: Vec<Vec3>,
    cfg: &StepConfig,
    potential: impl Fn(&[Vec3]) -> Result<(f64, Vec<Vec3>)>,
) -> Result<(Vec<Vec3>, NewtonReport)> {
    let free: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&i| !mesh.pinned()[i])
        .collect();
    let inv_dt2 = 1.0 / (cfg.dt * cfg.dt);
    let mut x = x0;
    let (mut f, mut g) = potential(&x)?;
    let mut report = NewtonReport {
        values: vec![f],
        ..Default::default()
    };
    for iter in 0..=cfg.newton_max_iters {
        let gn = grad_inf(&g);
        report.grad_norm = gn;
        if !gn.is_finite() {
            return Err(Error::NonFinite(format!(
                "potential gradient at newton iteration {iter}"
            )));
        }
        if gn <= cfg.newton_tol {
            report.iterations = iter;
            return Ok((x, report));
        }
        if iter == cfg.newton_max_iters {
            break;
        }

        let n = 3 * free.len();
        let h_full = internal_hessian(mesh, &x, InversionPolicy::Strict)?;
        let mut h = DMatrix::zeros(n, n);
        for (a, &va) in free.iter().enumerate() {
            for (b, &vb) in free.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        h[(3 * a + i, 3 * b + j)] = h_full[(3 * va + i, 3 * vb + j)];
                    }
                }
            }
            let m = mesh.masses()[va] * inv_dt2;
            for i in 0..3 {
                h[(3 * a + i, 3 * a + i)] += m;
            }
        }
        let rhs = DVector::from_iterator(
            n,
            free.iter().flat_map(|&v| g[v].iter().copied()).map(|c| -c),
        );
        let grad_dir = -&rhs;

        let mut dir = None;
        let diag_scale = h.diagonal().amax();
        let mut shift = 0.0;
        for _ in 0..12 {
            let mut hs = h.clone();
            for k in 0..n {
                hs[(k, k)] += shift;
            }
            if let Some(chol) = hs.cholesky() {
                let d = chol.solve(&rhs);
                if d.dot(&grad_dir) < 0.0 && d.iter().all(|c| c.is_finite()) {
                    dir = Some(d);
                    break;
                }
            }
            shift = if shift == 0.0 {
                1e-8 * diag_scale
            } else {
                shift * 10.0
            };
        }

        let slope_of = |d: &DVector<f64>| d.dot(&grad_dir);
        let attempt = |d: &DVector<f64>| -> Result<Option<Trial>> {
            let slope = slope_of(d);
            let mut alpha = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = x.clone();
                for (a, &v) in free.iter().enumerate() {
                    trial[v] += Vec3::new(d[3 * a], d[3 * a + 1], d[3 * a + 2]) * alpha;
                }
                match potential(&trial) {
                    Ok((ft, gt)) if ft.is_finite() && ft <= f + ARMIJO * alpha * slope => {
                        return Ok(Some((trial, ft, gt)))
                    }
                    Ok(_) => {}
                    Err(e)
                        if matches!(
                            e.root(),
                            Error::Inverted { .. } | Error::DegenerateStencil { .. }
                        ) => {}
                    Err(e) => return Err(e),
                }
                alpha *= cfg.line_search_shrink;
            }
            Ok(None)
        };

        let mut accepted = match &dir {
            Some(d) => attempt(d)?,
            None => None,
        };
        if accepted.is_none() {
            report.fallbacks += 1;
            // scale the steepest-descent step by the inertial term
            let sd = -&grad_dir
                / (inv_dt2 * mesh.masses().iter().cloned().fold(f64::INFINITY, f64::min));
            accepted = attempt(&sd)?;
        }
        match accepted {
            Some((xn, fnew, gnew)) => {
                x = xn;
                f = fnew;
                g = gnew;
                report.values.push(f);
            }
            None => {
                return Err(Error::LineSearch {
                    iter,
                    grad_norm: gn,
                })
            }
        }
    }
    Err(Error::NoConvergence {
        iters: cfg.newton_max_iters,
        grad_norm: report.grad_norm,
    })
}

/// Accepted line-search point: positions, potential value, gradient.
type Trial = (Vec<Vec3>, f64, Vec<Vec3>);

/// Minimiser of the modified potential starting from the momentum step.
pub fn solve_modified(
    mesh: &Mesh,
    x_m: &[Vec3],
    cfg: &StepConfig,
) -> Result<(Vec<Vec3>, NewtonReport)> {
    minimize(mesh, x_m.to_vec(), cfg, |x| {
        modified_potential(mesh, x, x_m, cfg.dt, InversionPolicy::Strict)
    })
}

/// Minimiser of the single-stage potential, for cross-checking [`solve_modified`].
pub fn solve_direct(
    mesh: &Mesh,
    state: &SimState,
    f_ext: &[Vec3],
    cfg: &StepConfig,
) -> Result<(Vec<Vec3>, NewtonReport)> {
    minimize(mesh, state.positions.clone(), cfg, |x| {
        implicit_euler_potential(mesh, state, f_ext, x, cfg.dt)
    })
}

/// One implicit Euler step with its Newton record.
pub fn implicit_euler_step_report(
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    cfg: &StepConfig,
) -> Result<(SimState, NewtonReport)> {
    cfg.validate()?;
    mesh.validate_state(state)?;
    let f_ext = eval_external(mesh, state, forces);
    let x_m = momentum_step(mesh, state, &f_ext, cfg.dt);
    let (x, report) = solve_modified(mesh, &x_m, cfg)?;
    let velocities = x
        .iter()
        .zip(&state.positions)
        .map(|(a, b)| (a - b) / cfg.dt)
        .collect();
    Ok((
        SimState {
            positions: x,
            velocities,
            time: state.time + cfg.dt,
        },
        report,
    ))
}

pub fn implicit_euler_step(
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    cfg: &StepConfig,
) -> Result<SimState> {
    implicit_euler_step_report(mesh, state, forces, cfg).map(|(s, _)| s)
}

/// Momentum and energy of one recorded state.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub linear: Vec3,
    pub angular: Vec3,
    pub kinetic: f64,
    pub elastic: f64,
}

impl StepDiagnostics {
    /// Uses the extended inversion policy so inverted predictions still report a finite energy.
    pub fn of(mesh: &Mesh, step: usize, state: &SimState) -> Result<StepDiagnostics> {
        let m = mesh.masses();
        Ok(StepDiagnostics {
            step,
            time: state.time,
            linear: linear_momentum(m, &state.velocities),
            angular: angular_momentum(m, &state.positions, &state.velocities),
            kinetic: kinetic_energy(m, &state.velocities),
            elastic: total_internal(mesh, &state.positions, InversionPolicy::TRAINING)?.value,
        })
    }
}

pub fn kinetic_energy(masses: &[f64], velocities: &[Vec3]) -> f64 {
    masses
        .iter()
        .zip(velocities)
        .map(|(m, v)| 0.5 * m * v.norm_squared())
        .sum()
}

/// What produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Reference,
    Model,
    Baseline,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Reference => "reference",
            Provenance::Model => "model",
            Provenance::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub provenance: Provenance,
    pub dt: f64,
    pub states: Vec<SimState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Relative momentum-constraint residual after each step (zero where no
    /// projection ran).
    pub residuals: Vec<f64>,
    /// Steps whose velocity projection fell back to the pseudo-inverse.
    pub flagged_steps: Vec<usize>,
}

impl Trajectory {
    pub fn start(mesh: &Mesh, state0: SimState, dt: f64) -> Result<Trajectory> {
        let d = StepDiagnostics::of(mesh, 0, &state0)?;
        Ok(Trajectory {
            provenance: Provenance::Reference,
            dt,
            states: vec![state0],
            diagnostics: vec![d],
            residuals: Vec::new(),
            flagged_steps: Vec::new(),
        })
    }

    pub fn push(&mut self, mesh: &Mesh, state: SimState) -> Result<()> {
        self.push_with_residual(mesh, state, 0.0)
    }

    pub fn push_with_residual(
        &mut self,
        mesh: &Mesh,
        state: SimState,
        residual: f64,
    ) -> Result<()> {
        let d = StepDiagnostics::of(mesh, self.states.len(), &state)?;
        self.states.push(state);
        self.diagnostics.push(d);
        self.residuals.push(residual);
        Ok(())
    }

    pub fn last(&self) -> &SimState {
        self.states
            .last()
            .expect("trajectory holds at least the initial state")
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

pub fn reference_rollout(
    mesh: &Mesh,
    state0: &SimState,
    forces: &ExternalForces,
    cfg: &StepConfig,
    n_steps: usize,
) -> Result<Trajectory> {
    forces.validate(mesh.n_vertices())?;
    let mut traj = Trajectory::start(mesh, state0.clone(), cfg.dt)?;
    for step in 0..n_steps {
        let next =
            implicit_euler_step(mesh, traj.last(), forces, cfg).map_err(|e| e.at_step(step))?;
        traj.push(mesh, next).map_err(|e| e.at_step(step))?;
    }
    Ok(traj)
}

use std::fmt;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{sample_scene, DatasetRanges};
use super::loss::sample_loss;
use super::rollout::{rollout, Policy, Scene};
use crate::elastic::{
    discrete_shell_bend, neo_hookean_tet, rest_edge_matrix, stvk_triangle, HingeRest,
    InversionPolicy, MaterialParams, TetRest, TriangleRest,
};
use crate::impulse_basis::{
    dihedral_angle, dihedral_gradient, edge_length_gradient, verify_completeness, Verdict,
};
use crate::integrator::ExternalForces;
use crate::mesh::{generate_sheet, triangle_strip_2d, Elements, MeshKind};
use crate::momentum_gnn::{Model, ModelConfig, VelocityMode};
use crate::velocity_projection::{project_velocities, MomentumPair};
use crate::{Mat3, Result, Vec3};

/// One property with its worst observed value.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tol {:.0e}, n = {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.instances
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }

    fn record(&mut self, name: &str, tolerance: f64, values: impl IntoIterator<Item = f64>) {
        let (mut n, mut worst) = (0, 0.0f64);
        for v in values {
            n += 1;
            // NaN must fail
            worst = if v.is_nan() || worst.is_nan() {
                f64::NAN
            } else {
                worst.max(v)
            };
        }
        self.checks.push(Check {
            name: name.into(),
            instances: n,
            worst: if worst.is_nan() { f64::INFINITY } else { worst },
            tolerance,
        });
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Rank and null space of the planar edge basis on triangle strips of 3..=10 vertices.
pub fn basis_rank() -> Result<SuiteReport> {
    let mut rank_err = Vec::new();
    let mut residuals = Vec::new();
    for n in 3..=10 {
        let (pos, tris) = triangle_strip_2d(n)?;
        let (edges, _) = crate::mesh::build_topology(&Elements::Triangles(tris))?;
        let r = verify_completeness(&pos, &edges)?;
        rank_err.push(if r.rank == 2 * n - 3 && r.verdict == Verdict::Pass {
            0.0
        } else {
            1.0
        });
        residuals.push(r.rigid_residuals.iter().fold(0.0f64, |a, &b| a.max(b)));
    }
    let mut rep = SuiteReport::default();
    rep.record("strip rank equals 2|V| - 3", 0.0, rank_err);
    rep.record("rigid motions span the left null space", 1e-9, residuals);
    Ok(rep)
}

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

/// Worst central-difference mismatch of `grad` against `f` at `x`, relative to `|grad|_inf`.
pub fn fd_mismatch(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    grad: &[f64],
    h: f64,
) -> Result<f64> {
    let scale = grad
        .iter()
        .fold(0.0f64, |a, g| a.max(g.abs()))
        .max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        worst = worst.max(((fp - fm) / (2.0 * h) - grad[k]).abs() / scale);
    }
    Ok(worst)
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflat<const N: usize>(x: &[f64]) -> [Vec3; N] {
    std::array::from_fn(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
}

fn rand_vec(rng: &mut impl Rng, s: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn random_triangle(rng: &mut impl Rng) -> [Vec3; 3] {
    loop {
        let x = [rand_vec(rng, 1.0), rand_vec(rng, 1.0), rand_vec(rng, 1.0)];
        if (x[1] - x[0]).cross(&(x[2] - x[0])).norm() > 0.2 {
            return x;
        }
    }
}

fn random_tet(rng: &mut impl Rng) -> [Vec3; 4] {
    loop {
        let mut x = [
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
        ];
        let v = (x[1] - x[0]).dot(&(x[2] - x[0]).cross(&(x[3] - x[0])));
        if v.abs() > 0.3 {
            if v < 0.0 {
                x.swap(2, 3);
            }
            return x;
        }
    }
}

fn random_hinge(rng: &mut impl Rng) -> [Vec3; 4] {
    loop {
        let x = [
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
            rand_vec(rng, 1.0),
        ];
        let e = x[1] - x[0];
        if e.cross(&(x[2] - x[0])).norm() > 0.2 && (x[3] - x[0]).cross(&e).norm() > 0.2 {
            return x;
        }
    }
}

/// FD checks of the elastic energies, stencil gradients and the network loss.
pub fn gradients(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let cloth = MaterialParams::cloth();
    let rubber = MaterialParams::rubber();
    let (mut stvk, mut nh, mut bend, mut dihedral, mut length, mut network) = (
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        Vec::new(),
    );
    for _ in 0..instances {
        let rest = random_triangle(&mut rng);
        let dm = rest_edge_matrix(&rest)?;
        let tr = TriangleRest {
            dm_inv: dm.try_inverse().unwrap_or_else(Matrix2::identity),
            area: 0.5 * dm.determinant().abs(),
        };
        let x: Vec<Vec3> = rest.iter().map(|p| p + rand_vec(&mut rng, 0.2)).collect();
        let (_, g) = stvk_triangle(&unflat::<3>(&flat(&x)), &tr, &cloth);
        stvk.push(fd_mismatch(
            &mut |y| Ok(stvk_triangle(&unflat::<3>(y), &tr, &cloth).0),
            &flat(&x),
            &flat(&g),
            h,
        )?);

        let rest = random_tet(&mut rng);
        let dm = Mat3::from_columns(&[rest[1] - rest[0], rest[2] - rest[0], rest[3] - rest[0]]);
        let tr = TetRest {
            dm_inv: dm.try_inverse().unwrap_or_else(Mat3::identity),
            volume: dm.determinant() / 6.0,
        };
        let x: Vec<Vec3> = rest.iter().map(|p| p + rand_vec(&mut rng, 0.05)).collect();
        let eval =
            |y: &[f64]| neo_hookean_tet(&unflat::<4>(y), &tr, &rubber, InversionPolicy::Strict);
        let (_, g) = eval(&flat(&x))?;
        nh.push(fd_mismatch(
            &mut |y| Ok(eval(y)?.0),
            &flat(&x),
            &flat(&g),
            h,
        )?);

        let x = random_hinge(&mut rng);
        let hr = HingeRest {
            theta: rng.random_range(-1.0..1.0),
            edge_length: rng.random_range(0.5..1.5),
            h_bar: rng.random_range(0.2..1.0),
        };
        let eval =
            |y: &[f64]| discrete_shell_bend(&unflat::<4>(y), &hr, cloth.bending_stiffness, 1e-12);
        let (_, g) = eval(&flat(&x))?;
        bend.push(fd_mismatch(
            &mut |y| Ok(eval(y)?.0),
            &flat(&x),
            &flat(&g),
            h,
        )?);
        let g = dihedral_gradient(&x, 1e-12)?;
        dihedral.push(fd_mismatch(
            &mut |y| dihedral_angle(&unflat::<4>(y), 1e-12),
            &flat(&x),
            &flat(&g),
            h,
        )?);

        let (a, b) = (rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0));
        let (ga, gb) = edge_length_gradient(&a, &b, 1e-12)?;
        length.push(fd_mismatch(
            &mut |y| Ok((Vec3::new(y[0], y[1], y[2]) - Vec3::new(y[3], y[4], y[5])).norm()),
            &flat(&[a, b]),
            &flat(&[ga, gb]),
            h,
        )?);
    }
    for _ in 0..instances {
        network.push(network_loss_mismatch(&mut rng)?);
    }
    let mut rep = SuiteReport::default();
    rep.record("StVK membrane gradient", PRIMITIVE_TOL, stvk);
    rep.record("Neo-Hookean gradient", PRIMITIVE_TOL, nh);
    rep.record("discrete-shell bend gradient", PRIMITIVE_TOL, bend);
    rep.record("dihedral angle gradient", PRIMITIVE_TOL, dihedral);
    rep.record("edge length gradient", PRIMITIVE_TOL, length);
    rep.record("network loss gradient", END_TO_END_TOL, network);
    Ok(rep)
}

/// FD check of the physics-loss gradient on a few parameter entries of a small random model.
fn network_loss_mismatch(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(3..=4);
    let mesh = generate_sheet(n, n, 0.5, 0.5, MaterialParams::cloth())?;
    let mut state = mesh.rest_state();
    for (x, v) in state.positions.iter_mut().zip(state.velocities.iter_mut()) {
        *x += rand_vec(rng, 0.02);
        *v = rand_vec(rng, 0.3);
    }
    let config = ModelConfig {
        layers: 2,
        width: 8,
        impulse_scale: 0.02,
        ..ModelConfig::default()
    };
    let mut model = Model::seeded(config, rng.random())?;
    let forces = ExternalForces::gravity(Vec3::new(0.0, 0.0, -9.81));
    let dt = 1.0 / 60.0;
    let s = sample_loss(&model, &mesh, &state, &forces, dt)?;
    let scale = s
        .gradients
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |a, g| a.max(g.abs()))
        .max(f64::MIN_POSITIVE);
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst = 0.0f64;
    for _ in 0..6 {
        let k = rng.random_range(0..ids.len());
        let len = model.store.tensor(ids[k]).len();
        let j = rng.random_range(0..len);
        let x0 = model.store.tensor(ids[k]).data()[j];
        let h = 1e-5 * x0.abs().max(1e-2);
        let mut at = |v: f64| -> Result<f64> {
            model.store.tensor_mut(ids[k]).data_mut()[j] = v;
            super::loss::physics_loss(&model, &mesh, &state, &forces, dt)
        };
        let fd = (at(x0 + h)? - at(x0 - h)?) / (2.0 * h);
        at(x0)?;
        worst = worst.max((fd - s.gradients[k].data()[j]).abs() / scale);
    }
    Ok(worst)
}

/// Per-step momentum drift of MomentumGNN rollouts with random parameters on
/// random pin-free scenes without external forces.
pub fn conservation(meshes: usize, steps: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lin, mut ang, mut flagged) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..meshes {
        let kind = if k % 2 == 0 {
            MeshKind::Shell
        } else {
            MeshKind::Solid
        };
        let ranges = match kind {
            MeshKind::Shell => DatasetRanges {
                grid: (4, 8),
                ..DatasetRanges::shell()
            },
            MeshKind::Solid => DatasetRanges {
                grid: (2, 4),
                ..DatasetRanges::solid()
            },
        };
        let (mesh, state) = sample_scene(kind, &ranges, &mut rng)?;
        let model = Model::seeded(
            ModelConfig {
                kind,
                ..ModelConfig::default()
            },
            rng.random(),
        )?;
        let scene = Scene::new(mesh, state, ExternalForces::none(), ranges.dt)?;
        let traj = rollout(
            Policy::Momentum(&model, VelocityMode::Projected),
            &scene,
            steps,
        )?;
        let m = &scene.mesh;
        let p_scale = m.total_mass() * m.diameter() / scene.dt;
        let l_scale = p_scale * m.diameter();
        let d = &traj.diagnostics;
        for w in d.windows(2) {
            lin.push((w[1].linear - w[0].linear).norm() / p_scale);
            ang.push((w[1].angular - w[0].angular).norm() / l_scale);
        }
        flagged.push(traj.flagged_steps.len() as f64);
    }
    let mut rep = SuiteReport::default();
    rep.record("linear momentum drift per step", 1e-9, lin);
    rep.record("angular momentum drift per step", 1e-10, ang);
    rep.record("pseudo-inverse fallbacks", 0.0, flagged);
    Ok(rep)
}

/// Residual, idempotence and stationarity of the velocity projection on random systems.
pub fn projection(systems: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut residual, mut idem, mut kkt) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..systems {
        let n = rng.random_range(3..30);
        let masses: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let x: Vec<Vec3> = (0..n).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let v: Vec<Vec3> = (0..n).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let targets = MomentumPair {
            p: rand_vec(&mut rng, 1.0),
            l: rand_vec(&mut rng, 1.0),
        };
        let out = project_velocities(&masses, &x, &v, &targets)?;
        let got = MomentumPair::of(&masses, &x, &out.velocities);
        let scale = targets.norm().max(MomentumPair::of(&masses, &x, &v).norm());
        residual.push(
            MomentumPair {
                p: got.p - targets.p,
                l: got.l - targets.l,
            }
            .norm()
                / scale,
        );
        let again = project_velocities(&masses, &x, &out.velocities, &targets)?;
        let vmax = out.velocities.iter().fold(0.0f64, |a, u| a.max(u.norm()));
        idem.push(
            again
                .velocities
                .iter()
                .zip(&out.velocities)
                .fold(0.0f64, |a, (p, q)| a.max((p - q).norm()))
                / vmax,
        );
        let lp: Vec3 = out.multipliers.fixed_rows::<3>(0).into();
        let ll: Vec3 = out.multipliers.fixed_rows::<3>(3).into();
        let dmax = out
            .velocities
            .iter()
            .zip(&v)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).norm()));
        kkt.push(
            out.velocities
                .iter()
                .zip(&v)
                .zip(&x)
                .fold(0.0f64, |a, ((p, q), xi)| {
                    a.max((p - q + lp + ll.cross(xi)).norm())
                })
                / dmax.max(f64::MIN_POSITIVE),
        );
    }
    let mut rep = SuiteReport::default();
    rep.record("constraint residual (relative)", 1e-10, residual);
    rep.record("idempotence", 1e-12, idem);
    rep.record("KKT stationarity", 1e-10, kkt);
    Ok(rep)
}

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::elastic::{total_internal, InversionPolicy};
use crate::integrator::{
    eval_external, implicit_euler_step, kinetic_energy, ExternalForces, Provenance, StepConfig,
    Trajectory,
};
use crate::mesh::io::{
    load_mesh, load_state, mesh_to_string, parse_mesh, read_state_from, write_state, Reader,
};
use crate::mesh::{Mesh, SimState};
use crate::momentum_gnn::{baseline_forward, forward, Model, Variant, VelocityMode};
use crate::velocity_projection::{angular_momentum, linear_momentum, target_momenta, MomentumPair};
use crate::{Error, Result};

/// Initial conditions for a rollout.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: Mesh,
    pub state: SimState,
    pub forces: ExternalForces,
    pub dt: f64,
}

/// On-disk scene description. Paths are relative to the scene file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneFile {
    pub mesh: PathBuf,
    /// Rest state with zero velocity when absent.
    #[serde(default)]
    pub state: Option<PathBuf>,
    #[serde(default = "ExternalForces::none")]
    pub forces: ExternalForces,
    pub dt: f64,
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
        let path = path.as_ref();
        let file: SceneFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mesh = load_mesh(base.join(&file.mesh))?;
        let state = match &file.state {
            Some(p) => load_state(base.join(p))?,
            None => mesh.rest_state(),
        };
        Scene::new(mesh, state, file.forces, file.dt)
    }

    pub fn new(mesh: Mesh, state: SimState, forces: ExternalForces, dt: f64) -> Result<Scene> {
        mesh.validate_state(&state)?;
        forces.validate(mesh.n_vertices())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(Scene {
            mesh,
            state,
            forces,
            dt,
        })
    }
}

/// Stepping rule of a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Reference,
    Momentum(&'a Model, VelocityMode),
    Baseline(&'a Model),
}

impl Policy<'_> {
    pub fn provenance(&self) -> Provenance {
        match self {
            Policy::Reference => Provenance::Reference,
            Policy::Momentum(..) => Provenance::Model,
            Policy::Baseline(_) => Provenance::Baseline,
        }
    }
}

/// Relative mismatch between the momenta of `state` and `targets`.
fn constraint_residual(mesh: &Mesh, state: &SimState, targets: &MomentumPair) -> f64 {
    let now = MomentumPair::of(mesh.masses(), &state.positions, &state.velocities);
    let scale = targets.norm().max(now.norm()).max(f64::MIN_POSITIVE);
    MomentumPair {
        p: now.p - targets.p,
        l: now.l - targets.l,
    }
    .norm()
        / scale
}

/// Steps `scene` `n_steps` times with per-step diagnostics. Errors carry the step index.
pub fn rollout(policy: Policy, scene: &Scene, n_steps: usize) -> Result<Trajectory> {
    let mesh = &scene.mesh;
    let cfg = StepConfig::for_mesh(mesh, scene.dt);
    let mut traj = Trajectory::start(mesh, scene.state.clone(), scene.dt)?;
    traj.provenance = policy.provenance();
    for step in 0..n_steps {
        let at = |e: Error| e.at_step(step);
        let cur = traj.last().clone();
        let (next, residual, flagged) = match policy {
            Policy::Reference => (
                implicit_euler_step(mesh, &cur, &scene.forces, &cfg).map_err(at)?,
                0.0,
                false,
            ),
            Policy::Momentum(model, mode) => {
                check_variant(model, Variant::Momentum)?;
                let pred = forward(model, mesh, &cur, &scene.forces, scene.dt, mode).map_err(at)?;
                let residual = if mode == VelocityMode::Projected && !mesh.has_pins() {
                    let f = eval_external(mesh, &cur, &scene.forces);
                    constraint_residual(
                        mesh,
                        &pred.state,
                        &target_momenta(mesh, &cur, &f, scene.dt),
                    )
                } else {
                    0.0
                };
                (pred.state, residual, pred.projection_flagged)
            }
            Policy::Baseline(model) => {
                check_variant(model, Variant::Baseline)?;
                let pred =
                    baseline_forward(model, mesh, &cur, &scene.forces, scene.dt).map_err(at)?;
                (pred.state, 0.0, false)
            }
        };
        if flagged {
            traj.flagged_steps.push(step);
        }
        traj.push_with_residual(mesh, next, residual).map_err(at)?;
    }
    Ok(traj)
}

fn check_variant(model: &Model, want: Variant) -> Result<()> {
    if model.config.variant != want {
        return Err(Error::InvalidArgument(format!(
            "policy needs a {want:?} model, got {:?}",
            model.config.variant
        )));
    }
    Ok(())
}

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"MSTJ";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Layout: magic, u32 version, u8 provenance, f64 dt, u32 mesh text length,
/// mesh text, u64 state count, then the states in the binary state format.
pub fn write_trajectory(w: &mut impl Write, mesh: &Mesh, traj: &Trajectory) -> Result<()> {
    let text = mesh_to_string(mesh)?;
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    w.write_all(&[traj.provenance as u8])?;
    w.write_all(&traj.dt.to_le_bytes())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(traj.states.len() as u64).to_le_bytes())?;
    for s in &traj.states {
        write_state(w, s)?;
    }
    Ok(())
}

pub fn save_trajectory(mesh: &Mesh, traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(&mut w, mesh, traj)?;
    w.flush()?;
    Ok(())
}

/// Recorded mesh and states. Diagnostics are recomputed, residuals and flags are not stored.
pub fn trajectory_from_bytes(bytes: &[u8]) -> Result<(Mesh, Trajectory)> {
    let mut r = Reader::new(bytes);
    let bad = |offset: usize, msg: &str| Error::Parse {
        offset,
        msg: msg.into(),
    };
    if r.take(4)? != TRAJECTORY_MAGIC {
        return Err(bad(0, "not a trajectory file"));
    }
    let version = r.u32()?;
    if version != TRAJECTORY_VERSION {
        return Err(bad(4, &format!("unsupported trajectory version {version}")));
    }
    let provenance = match r.take(1)?[0] {
        0 => Provenance::Reference,
        1 => Provenance::Model,
        2 => Provenance::Baseline,
        t => return Err(bad(8, &format!("unknown provenance tag {t}"))),
    };
    let dt = r.f64()?;
    let len = r.u32()? as usize;
    let text =
        std::str::from_utf8(r.take(len)?).map_err(|_| bad(r.pos, "mesh text is not UTF-8"))?;
    let mesh = parse_mesh(text)?;
    let count = r.u64()?;
    if count == 0 {
        return Err(bad(r.pos, "trajectory holds no states"));
    }
    let mut traj = Trajectory::start(&mesh, read_state_from(&mut r)?, dt)?;
    traj.provenance = provenance;
    for _ in 1..count {
        let mut s = read_state_from(&mut r)?;
        s.time = traj.states.len() as f64 * dt;
        mesh.validate_state(&s)?;
        traj.push(&mesh, s)?;
    }
    if !r.at_end() {
        return Err(bad(r.pos, "trailing bytes after trajectory"));
    }
    traj.residuals.clear();
    Ok((mesh, traj))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<(Mesh, Trajectory)> {
    trajectory_from_bytes(&std::fs::read(path)?)
}

pub const DIAG_COLUMNS: [&str; 10] = [
    "step", "time", "px", "py", "pz", "Lx", "Ly", "Lz", "kinetic", "elastic",
];

/// One CSV row per recorded state; momenta and energies are recomputed from the states.
pub fn diag_rows(mesh: &Mesh, traj: &Trajectory) -> Result<Vec<[f64; 10]>> {
    let m = mesh.masses();
    traj.states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = linear_momentum(m, &s.velocities);
            let l = angular_momentum(m, &s.positions, &s.velocities);
            let e = total_internal(mesh, &s.positions, InversionPolicy::TRAINING)?.value;
            Ok([
                k as f64,
                k as f64 * traj.dt,
                p.x,
                p.y,
                p.z,
                l.x,
                l.y,
                l.z,
                kinetic_energy(m, &s.velocities),
                e,
            ])
        })
        .collect()
}

pub fn write_diag(w: impl Write, rows: &[[f64; 10]]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DIAG_COLUMNS).map_err(csv_err)?;
    for r in rows {
        let mut cells = vec![format!("{}", r[0] as u64)];
        cells.extend(r[1..].iter().map(|v| format!("{v:e}")));
        out.write_record(&cells).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            offset,
            msg: format!("{kind:?}"),
        },
    }
}

pub fn diag_export(mesh: &Mesh, traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let rows = diag_rows(mesh, traj)?;
    write_diag(BufWriter::new(std::fs::File::create(path)?), &rows)
}

pub fn read_diag(path: impl AsRef<Path>) -> Result<Vec<[f64; 10]>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(DIAG_COLUMNS) {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize::<[f64; 10]>()
        .map(|row| row.map_err(csv_err))
        .collect()
}

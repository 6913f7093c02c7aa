use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::elastic::{InversionPolicy, MaterialParams};
use crate::integrator::{reference_rollout, ExternalForces, StepConfig};
use crate::mesh::io::{load_mesh, load_state, save_mesh, save_state};
use crate::mesh::{
    deform_affine, deform_bezier, generate_cuboid, generate_sheet, Mesh, MeshKind, SimState,
};
use crate::{Error, Mat3, Result, Vec3};

/// One training input: a state on one of the dataset meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub mesh: usize,
    pub state: SimState,
    pub forces: ExternalForces,
    pub dt: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub meshes: Vec<Mesh>,
    pub samples: Vec<TrainSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mesh_of(&self, s: &TrainSample) -> &Mesh {
        &self.meshes[s.mesh]
    }

    /// Appends another dataset, re-indexing its meshes.
    pub fn extend(&mut self, other: Dataset) {
        let offset = self.meshes.len();
        self.meshes.extend(other.meshes);
        self.samples.extend(other.samples.into_iter().map(|mut s| {
            s.mesh += offset;
            s
        }));
    }
}

/// Sampling ranges for procedural scenes. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetRanges {
    /// Vertices per side.
    pub grid: (usize, usize),
    /// Side length in m.
    pub size: (f64, f64),
    /// Upper bound of the rigid part of the initial speed, m/s.
    pub speed: f64,
    /// Bezier control point height (sheets, fraction of the length) or affine
    /// perturbation (cuboids, per matrix entry).
    pub deformation: f64,
    /// Snapshots harvested per scene (the initial state plus the following steps).
    pub snapshots_per_scene: usize,
    pub dt: f64,
    pub material: MaterialParams,
}

impl DatasetRanges {
    pub fn shell() -> DatasetRanges {
        DatasetRanges {
            grid: (4, 8),
            size: (0.5, 1.0),
            speed: 0.5,
            deformation: 0.3,
            snapshots_per_scene: 30,
            dt: 1.0 / 60.0,
            material: MaterialParams::cloth(),
        }
    }

    pub fn solid() -> DatasetRanges {
        DatasetRanges {
            grid: (2, 4),
            size: (0.2, 0.5),
            speed: 0.5,
            deformation: 0.15,
            snapshots_per_scene: 30,
            dt: 1.0 / 60.0,
            material: MaterialParams::rubber(),
        }
    }

    pub fn for_kind(kind: MeshKind) -> DatasetRanges {
        match kind {
            MeshKind::Shell => DatasetRanges::shell(),
            MeshKind::Solid => DatasetRanges::solid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grid.0 >= 2
            && self.grid.0 <= self.grid.1
            && self.size.0 > 0.0
            && self.size.0 <= self.size.1
            && self.speed >= 0.0
            && self.deformation >= 0.0
            && self.snapshots_per_scene > 0
            && self.dt > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid dataset ranges {self:?}"
            )));
        }
        Ok(())
    }
}

const MAX_RETRIES: usize = 20;

fn random_velocities(rng: &mut impl Rng, positions: &[Vec3], speed: f64, size: f64) -> Vec<Vec3> {
    let n = positions.len() as f64;
    let centroid = positions.iter().sum::<Vec3>() / n;
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let v0 = Vec3::from(dir) * rng.random_range(0.0..=speed);
    let omega = Vec3::from(axis) * (rng.random_range(0.0..=speed) / size);
    positions
        .iter()
        .map(|x| {
            let jitter = Vec3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            ) * (0.1 * speed);
            v0 + omega.cross(&(x - centroid)) + jitter
        })
        .collect()
}

fn sample_shell_scene(rng: &mut impl Rng, r: &DatasetRanges) -> Result<(Mesh, SimState)> {
    let nx = rng.random_range(r.grid.0..=r.grid.1);
    let ny = rng.random_range(r.grid.0..=r.grid.1);
    let sx = rng.random_range(r.size.0..=r.size.1);
    let sy = rng.random_range(r.size.0..=r.size.1);
    let mesh = generate_sheet(nx, ny, sx, sy, r.material)?;
    let h = r.deformation * sx;
    let cp = [
        Vec3::zeros(),
        Vec3::new(sx / 3.0, 0.0, rng.random_range(-h..=h)),
        Vec3::new(2.0 * sx / 3.0, 0.0, rng.random_range(-h..=h)),
        Vec3::new(sx, 0.0, rng.random_range(-h..=h)),
    ];
    let mut state = deform_bezier(&mesh, &mesh.rest_state(), cp)?;
    state.velocities = random_velocities(rng, &state.positions, r.speed, sx.max(sy));
    Ok((mesh, state))
}

fn sample_solid_scene(rng: &mut impl Rng, r: &DatasetRanges) -> Result<(Mesh, SimState)> {
    let n: [usize; 3] = std::array::from_fn(|_| rng.random_range(r.grid.0..=r.grid.1));
    let dims = Vec3::from_fn(|_, _| rng.random_range(r.size.0..=r.size.1));
    let mesh = generate_cuboid(n[0], n[1], n[2], dims, r.material)?;
    for _ in 0..MAX_RETRIES {
        let a = Mat3::identity()
            + Mat3::from_fn(|_, _| rng.random_range(-r.deformation..=r.deformation));
        let det = a.determinant();
        if !(0.3..=3.0).contains(&det) {
            continue;
        }
        let mut state = deform_affine(&mesh.rest_state(), &a, &Vec3::zeros());
        state.velocities = random_velocities(rng, &state.positions, r.speed, dims.max());
        if crate::elastic::total_internal(&mesh, &state.positions, InversionPolicy::Strict).is_ok()
        {
            return Ok((mesh, state));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no admissible affine deformation after {MAX_RETRIES} attempts"
    )))
}

/// One randomly deformed sheet or cuboid with random initial velocities.
pub fn sample_scene(
    kind: MeshKind,
    ranges: &DatasetRanges,
    rng: &mut impl Rng,
) -> Result<(Mesh, SimState)> {
    ranges.validate()?;
    match kind {
        MeshKind::Shell => sample_shell_scene(rng, ranges),
        MeshKind::Solid => sample_solid_scene(rng, ranges),
    }
}

fn harvest(
    mesh: Mesh,
    state: SimState,
    forces: ExternalForces,
    r: &DatasetRanges,
    budget: usize,
    out: &mut Dataset,
) -> Result<()> {
    let take = r.snapshots_per_scene.min(budget);
    let cfg = StepConfig::for_mesh(&mesh, r.dt);
    let traj = reference_rollout(&mesh, &state, &forces, &cfg, take - 1)?;
    let id = out.meshes.len();
    out.meshes.push(mesh);
    for s in traj.states {
        out.samples.push(TrainSample {
            mesh: id,
            state: SimState { time: 0.0, ..s },
            forces: forces.clone(),
            dt: r.dt,
        });
    }
    Ok(())
}

/// Deformed sheets or cuboids recovering freely, harvested every step.
/// Deterministic in `seed`.
pub fn gen_dataset(
    kind: MeshKind,
    count: usize,
    seed: u64,
    ranges: &DatasetRanges,
) -> Result<Dataset> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Dataset::default();
    while out.len() < count {
        let mut last = None;
        let mut done = false;
        for _ in 0..MAX_RETRIES {
            let scene = match kind {
                MeshKind::Shell => sample_shell_scene(&mut rng, ranges),
                MeshKind::Solid => sample_solid_scene(&mut rng, ranges),
            };
            let attempt = scene.and_then(|(mesh, state)| {
                let mut tmp = Dataset::default();
                harvest(
                    mesh,
                    state,
                    ExternalForces::none(),
                    ranges,
                    count - out.len(),
                    &mut tmp,
                )?;
                Ok(tmp)
            });
            match attempt {
                Ok(tmp) => {
                    out.extend(tmp);
                    done = true;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if !done {
            return Err(last.expect("at least one attempt"));
        }
    }
    Ok(out)
}

/// Sheets pinned along their last row, released from rest under a uniform
/// acceleration field of random direction and magnitude in `[0, 20]` m/s^2.
pub fn gen_pinned_dataset(count: usize, seed: u64, ranges: &DatasetRanges) -> Result<Dataset> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Dataset::default();
    while out.len() < count {
        let nx = rng.random_range(ranges.grid.0..=ranges.grid.1);
        let ny = rng.random_range(ranges.grid.0..=ranges.grid.1);
        let sx = rng.random_range(ranges.size.0..=ranges.size.1);
        let sy = rng.random_range(ranges.size.0..=ranges.size.1);
        let sheet = generate_sheet(nx, ny, sx, sy, ranges.material)?;
        let pins = (0..nx * ny).map(|k| k / nx == ny - 1).collect();
        let mesh = sheet.with_pinned(pins)?;
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let forces =
            ExternalForces::gravity(Vec3::from(dir) * rng.random_range(0.0..=PINNED_MAX_FORCE));
        let state = mesh.rest_state();
        harvest(mesh, state, forces, ranges, count - out.len(), &mut out)?;
    }
    Ok(out)
}

pub const PINNED_MAX_FORCE: f64 = 20.0;

#[derive(serde::Serialize, serde::Deserialize)]
struct IndexEntry {
    mesh: usize,
    state: String,
    forces: ExternalForces,
    dt: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Index {
    version: u32,
    meshes: Vec<String>,
    samples: Vec<IndexEntry>,
}

/// Writes `index.json`, one text mesh per mesh and one binary state per sample.
pub fn save_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = Index {
        version: 1,
        meshes: Vec::new(),
        samples: Vec::new(),
    };
    for (k, m) in data.meshes.iter().enumerate() {
        let name = format!("mesh_{k:05}.msh");
        save_mesh(m, dir.join(&name))?;
        index.meshes.push(name);
    }
    for (k, s) in data.samples.iter().enumerate() {
        let name = format!("state_{k:06}.bin");
        save_state(&s.state, dir.join(&name))?;
        index.samples.push(IndexEntry {
            mesh: s.mesh,
            state: name,
            forces: s.forces.clone(),
            dt: s.dt,
        });
    }
    std::fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&index)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let index: Index = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
    if index.version != 1 {
        return Err(Error::InvalidArgument(format!(
            "unsupported dataset version {}",
            index.version
        )));
    }
    let meshes = index
        .meshes
        .iter()
        .map(|m| load_mesh(dir.join(m)))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(index.samples.len());
    for e in index.samples {
        let mesh = meshes.get(e.mesh).ok_or(Error::IndexOutOfRange {
            index: e.mesh,
            len: meshes.len(),
        })?;
        let state = load_state(dir.join(&e.state))?;
        mesh.validate_state(&state)?;
        samples.push(TrainSample {
            mesh: e.mesh,
            state,
            forces: e.forces,
            dt: e.dt,
        });
    }
    Ok(Dataset { meshes, samples })
}

//! Mesh representation, topology, mass lumping, procedural generators and file I/O.

mod deform;
mod generate;
pub mod io;
mod topology;

pub use deform::{bezier_point, deform_affine, deform_bezier, BezierArc};
pub use generate::{generate_cuboid, generate_sheet, triangle_strip_2d};
pub use topology::{build_topology, lump_masses, Hinge};

use crate::elastic::{MaterialParams, RestData};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Shell,
    Solid,
}

impl MeshKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeshKind::Shell => "shell",
            MeshKind::Solid => "solid",
        }
    }
}

impl std::str::FromStr for MeshKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shell" => Ok(MeshKind::Shell),
            "solid" => Ok(MeshKind::Solid),
            other => Err(Error::InvalidArgument(format!(
                "unknown mesh kind '{other}'"
            ))),
        }
    }
}

/// Triangles for shells, tetrahedra for solids. Never mixed.
#[derive(Debug, Clone, PartialEq)]
pub enum Elements {
    Triangles(Vec<[usize; 3]>),
    Tets(Vec<[usize; 4]>),
}

impl Elements {
    pub fn kind(&self) -> MeshKind {
        match self {
            Elements::Triangles(_) => MeshKind::Shell,
            Elements::Tets(_) => MeshKind::Solid,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Elements::Triangles(t) => t.len(),
            Elements::Tets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vertex indices of element `e`.
    pub fn vertices(&self, e: usize) -> &[usize] {
        match self {
            Elements::Triangles(t) => &t[e],
            Elements::Tets(t) => &t[e],
        }
    }
}

/// An immutable simulation mesh. Topology, masses and rest data are derived on
/// construction; the struct is `Send + Sync` and can be shared freely.
#[derive(Debug, Clone)]
pub struct Mesh {
    rest_positions: Vec<Vec3>,
    elements: Elements,
    edges: Vec<[usize; 2]>,
    hinges: Vec<Hinge>,
    masses: Vec<f64>,
    pinned: Vec<bool>,
    material: MaterialParams,
    rest: RestData,
    diameter: f64,
}

impl Mesh {
    /// Builds a mesh from rest geometry and elements. Masses are lumped from
    /// the material density (and thickness for shells).
    pub fn new(
        rest_positions: Vec<Vec3>,
        elements: Elements,
        material: MaterialParams,
        pinned: Vec<bool>,
    ) -> Result<Mesh> {
        let n = rest_positions.len();
        if n == 0 {
            return Err(Error::InvalidArgument("mesh has no vertices".into()));
        }
        if pinned.len() != n {
            return Err(Error::InvalidArgument(format!(
                "pin list has {} entries for {} vertices",
                pinned.len(),
                n
            )));
        }
        if let Some(p) = rest_positions
            .iter()
            .find(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(format!("rest position {p:?}")));
        }
        for e in 0..elements.len() {
            for &v in elements.vertices(e) {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
            }
        }
        material.validate(elements.kind())?;
        let (edges, hinges) = build_topology(&elements)?;
        let thickness = match elements.kind() {
            MeshKind::Shell => Some(material.thickness),
            MeshKind::Solid => None,
        };
        let masses = lump_masses(&rest_positions, &elements, material.density, thickness)?;
        let diameter = bounding_diameter(&rest_positions);
        let rest = RestData::new(&rest_positions, &elements, &edges, &hinges, diameter)?;
        Ok(Mesh {
            rest_positions,
            elements,
            edges,
            hinges,
            masses,
            pinned,
            material,
            rest,
            diameter,
        })
    }

    /// Same geometry and topology with a different pin set.
    pub fn with_pinned(&self, pinned: Vec<bool>) -> Result<Mesh> {
        if pinned.len() != self.n_vertices() {
            return Err(Error::InvalidArgument("pin list length mismatch".into()));
        }
        let mut m = self.clone();
        m.pinned = pinned;
        Ok(m)
    }

    pub fn kind(&self) -> MeshKind {
        self.elements.kind()
    }

    pub fn n_vertices(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest_positions
    }

    pub fn elements(&self) -> &Elements {
        &self.elements
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn hinges(&self) -> &[Hinge] {
        &self.hinges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    pub fn has_pins(&self) -> bool {
        self.pinned.iter().any(|&p| p)
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn rest(&self) -> &RestData {
        &self.rest
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Bounding-box diagonal of the rest configuration.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn rest_lengths(&self) -> &[f64] {
        &self.rest.edge_lengths
    }

    pub fn mean_rest_length(&self) -> f64 {
        let l = &self.rest.edge_lengths;
        l.iter().sum::<f64>() / l.len().max(1) as f64
    }

    pub fn mean_mass(&self) -> f64 {
        self.total_mass() / self.n_vertices() as f64
    }

    /// Degenerate-edge threshold.
    pub fn eps_len(&self) -> f64 {
        1e-9 * self.diameter
    }

    /// Degenerate-triangle area threshold.
    pub fn eps_area(&self) -> f64 {
        1e-12 * self.diameter * self.diameter
    }

    /// State at rest with zero velocity.
    pub fn rest_state(&self) -> SimState {
        SimState {
            positions: self.rest_positions.clone(),
            velocities: vec![Vec3::zeros(); self.n_vertices()],
            time: 0.0,
        }
    }

    /// Checks that `state` matches this mesh and is finite.
    pub fn validate_state(&self, state: &SimState) -> Result<()> {
        let n = self.n_vertices();
        if state.positions.len() != n || state.velocities.len() != n {
            return Err(Error::InvalidArgument(format!(
                "state has {}/{} entries for {} vertices",
                state.positions.len(),
                state.velocities.len(),
                n
            )));
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("state".into()));
        }
        Ok(())
    }
}

pub(crate) fn bounding_diameter(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Per-vertex positions and velocities at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub time: f64,
}

impl SimState {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>) -> SimState {
        SimState {
            positions,
            velocities,
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(self.velocities.iter())
            .all(|v| v.iter().all(|c| c.is_finite()))
    }
}

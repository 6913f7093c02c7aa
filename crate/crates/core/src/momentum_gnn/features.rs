use std::f64::consts::PI;

use crate::impulse_basis::dihedral_angle;
use crate::mesh::{Mesh, SimState};
use crate::neural::Tensor;
use crate::{Error, Result, Vec3};

/// speed, mass, pin flag, |f_ext| / m
pub const NODE_FEATURES: usize = 4;
/// rest length, current length, strain, dihedral deviation, hinge flag
pub const EDGE_FEATURES: usize = 5;
pub const STRAIN_COLUMN: usize = 2;
pub const DIHEDRAL_COLUMN: usize = 3;
pub const FEATURE_SCHEMA: u32 = 1;

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_angle(d: f64) -> f64 {
    d - 2.0 * PI * ((d - PI) / (2.0 * PI)).ceil()
}

/// Raw per-vertex features. All are invariant under rigid motions of the state.
pub fn node_features(mesh: &Mesh, state: &SimState, f_ext: &[Vec3]) -> Tensor {
    let m = mesh.masses();
    Tensor::from_fn(mesh.n_vertices(), NODE_FEATURES, |i, c| match c {
        0 => state.velocities[i].norm(),
        1 => m[i],
        2 => f64::from(u8::from(mesh.pinned()[i])),
        _ => f_ext[i].norm() / m[i],
    })
}

/// Per-edge dihedral deviation from rest (zero for non-hinge edges).
pub fn edge_dihedrals(mesh: &Mesh, x: &[Vec3]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mesh.edges().len()];
    for (k, (h, r)) in mesh.hinges().iter().zip(&mesh.rest().hinges).enumerate() {
        let theta =
            dihedral_angle(&h.vertices.map(|v| x[v]), mesh.eps_area()).map_err(|e| match e {
                Error::DegenerateStencil { reason, .. } => {
                    Error::DegenerateStencil { index: k, reason }
                }
                e => e,
            })?;
        out[h.edge] = wrap_angle(theta - r.theta);
    }
    Ok(out)
}

/// Raw per-directed-edge features at `x`; both directions of an edge share a row value.
pub fn edge_features(mesh: &Mesh, x: &[Vec3]) -> Result<Tensor> {
    let dihedral = edge_dihedrals(mesh, x)?;
    let mut hinge = vec![0.0; mesh.edges().len()];
    for h in mesh.hinges() {
        hinge[h.edge] = 1.0;
    }
    let rest = mesh.rest_lengths();
    let mut data = Vec::with_capacity(2 * mesh.edges().len() * EDGE_FEATURES);
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        let len = (x[a] - x[b]).norm();
        if !(len > mesh.eps_len()) {
            return Err(Error::DegenerateEdge(a, b));
        }
        let row = [
            rest[e],
            len,
            (len - rest[e]) / rest[e],
            dihedral[e],
            hinge[e],
        ];
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
    }
    Tensor::new(2 * mesh.edges().len(), EDGE_FEATURES, data)
}

/// Per-column standardisation `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Fits mean and standard deviation; near-constant columns keep unit scale.
    pub fn fit<'a>(width: usize, tensors: impl IntoIterator<Item = &'a Tensor>) -> Standardizer {
        let (mut n, mut sum, mut sq) = (0usize, vec![0.0; width], vec![0.0; width]);
        for t in tensors {
            for r in 0..t.rows() {
                for (c, v) in t.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Standardizer::identity(width);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                let s = var.sqrt();
                if s > 1e-12 * m.abs().max(1e-12) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        Tensor::from_fn(t.rows(), t.cols(), |r, c| {
            (t.get(r, c) - self.mean[c]) / self.std[c]
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureNormalizer {
    pub node: Standardizer,
    pub edge: Standardizer,
}

impl Default for FeatureNormalizer {
    fn default() -> Self {
        FeatureNormalizer {
            node: Standardizer::identity(NODE_FEATURES),
            edge: Standardizer::identity(EDGE_FEATURES),
        }
    }
}

impl FeatureNormalizer {
    /// Scale and shift for the per-layer `[dihedral, strain]` inputs.
    pub fn geometry(&self) -> ([f64; 2], [f64; 2]) {
        let e = &self.edge;
        (
            [e.mean[DIHEDRAL_COLUMN], e.mean[STRAIN_COLUMN]],
            [e.std[DIHEDRAL_COLUMN], e.std[STRAIN_COLUMN]],
        )
    }
}

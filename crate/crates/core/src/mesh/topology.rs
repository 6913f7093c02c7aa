use std::collections::{BTreeMap, BTreeSet};

use super::Elements;
use crate::{Error, Result, Vec3};

/// An interior triangle edge with its two opposite vertices.
///
/// `vertices` is `[a, b, opp_a, opp_b]` where `(a, b)` is the canonical edge
/// (`a < b`), `opp_a` belongs to the triangle whose winding traverses `a -> b`
/// and `opp_b` to the other one. The dihedral angle sign is defined relative to
/// this ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hinge {
    pub edge: usize,
    pub vertices: [usize; 4],
}

fn canonical(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Derives the deduplicated edge list (sorted, smaller index first) and the
/// hinge list (sorted by edge) from the elements.
pub fn build_topology(elements: &Elements) -> Result<(Vec<[usize; 2]>, Vec<Hinge>)> {
    let mut seen = BTreeSet::new();
    for e in 0..elements.len() {
        let vs = elements.vertices(e);
        let mut key = vs.to_vec();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DegenerateElement {
                index: e,
                reason: format!("repeated vertex in {vs:?}"),
            });
        }
        if !seen.insert(key) {
            return Err(Error::DuplicateElement(e));
        }
    }

    match elements {
        Elements::Tets(tets) => {
            let mut edges = BTreeSet::new();
            for t in tets {
                for a in 0..4 {
                    for b in a + 1..4 {
                        edges.insert(canonical(t[a], t[b]));
                    }
                }
            }
            Ok((edges.into_iter().collect(), Vec::new()))
        }
        Elements::Triangles(tris) => {
            // canonical edge -> [(opposite vertex, winding goes low->high)]
            let mut adj: BTreeMap<[usize; 2], Vec<(usize, bool)>> = BTreeMap::new();
            for t in tris {
                for k in 0..3 {
                    let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                    adj.entry(canonical(a, b)).or_default().push((c, a < b));
                }
            }
            let mut edges = Vec::with_capacity(adj.len());
            let mut hinges = Vec::new();
            for (idx, (edge, faces)) in adj.into_iter().enumerate() {
                edges.push(edge);
                match faces.as_slice() {
                    [_] => {}
                    [f0, f1] => {
                        let (opp_a, opp_b) = match (f0.1, f1.1) {
                            (true, false) => (f0.0, f1.0),
                            (false, true) => (f1.0, f0.0),
                            // inconsistent winding: fall back to index order
                            _ => (f0.0.min(f1.0), f0.0.max(f1.0)),
                        };
                        hinges.push(Hinge {
                            edge: idx,
                            vertices: [edge[0], edge[1], opp_a, opp_b],
                        });
                    }
                    _ => return Err(Error::NonManifold(edge[0], edge[1])),
                }
            }
            Ok((edges, hinges))
        }
    }
}

pub(crate) fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub(crate) fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Equal split of each element's mass over its vertices.
///
/// Triangle mass is `density * area * thickness`, tetrahedron mass is
/// `density * volume`. Every vertex must belong to at least one element.
pub fn lump_masses(
    positions: &[Vec3],
    elements: &Elements,
    density: f64,
    thickness: Option<f64>,
) -> Result<Vec<f64>> {
    if !(density > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be positive, got {density}"
        )));
    }
    let mut masses = vec![0.0; positions.len()];
    match elements {
        Elements::Triangles(tris) => {
            let t = thickness.ok_or_else(|| {
                Error::InvalidArgument("shell mass lumping needs a thickness".into())
            })?;
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "thickness must be positive, got {t}"
                )));
            }
            for (i, tri) in tris.iter().enumerate() {
                let area =
                    triangle_area(&positions[tri[0]], &positions[tri[1]], &positions[tri[2]]);
                if !(area > 0.0) {
                    return Err(Error::DegenerateElement {
                        index: i,
                        reason: "zero area".into(),
                    });
                }
                let share = density * area * t / 3.0;
                for &v in tri {
                    masses[v] += share;
                }
            }
        }
        Elements::Tets(tets) => {
            for (i, tet) in tets.iter().enumerate() {
                let vol = tet_signed_volume(
                    &positions[tet[0]],
                    &positions[tet[1]],
                    &positions[tet[2]],
                    &positions[tet[3]],
                )
                .abs();
                if !(vol > 0.0) {
                    return Err(Error::DegenerateElement {
                        index: i,
                        reason: "zero volume".into(),
                    });
                }
                let share = density * vol / 4.0;
                for &v in tet {
                    masses[v] += share;
                }
            }
        }
    }
    if let Some(v) = masses.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "vertex {v} belongs to no element"
        )));
    }
    Ok(masses)
}

//! Momentum-conserving impulse directions.
//!
//! Every stencil here is the position gradient of a rigid-motion invariant
//! scalar (an edge length or a dihedral angle). Impulses along such gradients
//! have zero net force and zero net torque, so any combination `B w` leaves
//! linear and angular momentum untouched.

use nalgebra::{DMatrix, DVector};

use crate::mesh::Hinge;
use crate::{Error, Result, Vec3};

/// `(d|x_i - x_j| / dx_i, d|x_i - x_j| / dx_j)`.
pub fn edge_length_gradient(xi: &Vec3, xj: &Vec3, eps_len: f64) -> Result<(Vec3, Vec3)> {
    let d = xi - xj;
    let len = d.norm();
    if !(len > eps_len) {
        return Err(Error::DegenerateStencil {
            index: 0,
            reason: format!("edge length {len:e} below {eps_len:e}"),
        });
    }
    let u = d / len;
    Ok((u, -u))
}

struct HingeFrame {
    e: Vec3,
    e_len: f64,
    na: Vec3,
    nb: Vec3,
}

fn hinge_frame(x: &[Vec3; 4], eps_area: f64) -> Result<HingeFrame> {
    let e = x[1] - x[0];
    let na = e.cross(&(x[2] - x[0]));
    let nb = (x[3] - x[0]).cross(&e);
    // |n| is twice the triangle area
    for (n, tri) in [(&na, "a"), (&nb, "b")] {
        if !(0.5 * n.norm() > eps_area) {
            return Err(Error::DegenerateStencil {
                index: 0,
                reason: format!(
                    "triangle {tri} area {:e} below {eps_area:e}",
                    0.5 * n.norm()
                ),
            });
        }
    }
    Ok(HingeFrame {
        e_len: e.norm(),
        e,
        na,
        nb,
    })
}

/// Signed dihedral angle of the hinge `[x0, x1, x2, x3]` (shared edge
/// `x0 -> x1`, opposite vertices `x2`, `x3`): the rotation about `x1 - x0`
/// taking the normal of `(x0, x1, x2)` onto the normal of `(x1, x0, x3)`.
/// Zero when flat, in `(-pi, pi]`.
pub fn dihedral_angle(x: &[Vec3; 4], eps_area: f64) -> Result<f64> {
    let f = hinge_frame(x, eps_area)?;
    Ok(angle_of(&f))
}

fn angle_of(f: &HingeFrame) -> f64 {
    let sin = f.na.cross(&f.nb).dot(&f.e) / f.e_len;
    let cos = f.na.dot(&f.nb);
    sin.atan2(cos)
}

/// Closed-form `d theta / d x_k` for the four hinge vertices.
pub fn dihedral_gradient(x: &[Vec3; 4], eps_area: f64) -> Result<[Vec3; 4]> {
    let f = hinge_frame(x, eps_area)?;
    Ok(gradient_of(x, &f))
}

fn gradient_of(x: &[Vec3; 4], f: &HingeFrame) -> [Vec3; 4] {
    let na = f.na / f.na.norm_squared();
    let nb = f.nb / f.nb.norm_squared();
    let ta = (x[2] - x[0]).dot(&f.e) / f.e_len;
    let tb = (x[3] - x[0]).dot(&f.e) / f.e_len;
    let g1 = na * ta + nb * tb;
    let g2 = na * -f.e_len;
    let g3 = nb * -f.e_len;
    let g0 = -(g1 + g2 + g3);
    [g0, g1, g2, g3]
}

/// Angle and gradient in one pass.
pub fn dihedral_angle_and_gradient(x: &[Vec3; 4], eps_area: f64) -> Result<(f64, [Vec3; 4])> {
    let f = hinge_frame(x, eps_area)?;
    Ok((angle_of(&f), gradient_of(x, &f)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchStencil {
    pub edge: [usize; 2],
    /// `(x_i - x_j) / |x_i - x_j|`
    pub direction: Vec3,
}

impl StretchStencil {
    pub fn new(edge: [usize; 2], positions: &[Vec3], eps_len: f64) -> Result<StretchStencil> {
        let (u, _) = edge_length_gradient(&positions[edge[0]], &positions[edge[1]], eps_len)?;
        Ok(StretchStencil { edge, direction: u })
    }

    /// `(dp_i, dp_j) = (w u, -w u)`.
    pub fn apply(&self, w: f64) -> [(usize, Vec3); 2] {
        let p = self.direction * w;
        [(self.edge[0], p), (self.edge[1], -p)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BendStencil {
    pub vertices: [usize; 4],
    pub theta: f64,
    pub gradients: [Vec3; 4],
}

impl BendStencil {
    pub fn new(hinge: &Hinge, positions: &[Vec3], eps_area: f64) -> Result<BendStencil> {
        let x = hinge.vertices.map(|v| positions[v]);
        let (theta, gradients) = dihedral_angle_and_gradient(&x, eps_area)?;
        Ok(BendStencil {
            vertices: hinge.vertices,
            theta,
            gradients,
        })
    }

    /// `dp_k = w_b * d theta / d x_k`.
    pub fn apply(&self, w: f64) -> [(usize, Vec3); 4] {
        std::array::from_fn(|k| (self.vertices[k], self.gradients[k] * w))
    }
}

/// Stretch stencils for every edge, in edge order.
pub fn stretch_stencils(
    positions: &[Vec3],
    edges: &[[usize; 2]],
    eps_len: f64,
) -> Result<Vec<StretchStencil>> {
    edges
        .iter()
        .enumerate()
        .map(|(k, &e)| StretchStencil::new(e, positions, eps_len).map_err(|err| reindex(err, k)))
        .collect()
}

/// Bend stencils for every hinge, in hinge order.
pub fn bend_stencils(
    positions: &[Vec3],
    hinges: &[Hinge],
    eps_area: f64,
) -> Result<Vec<BendStencil>> {
    hinges
        .iter()
        .enumerate()
        .map(|(k, h)| BendStencil::new(h, positions, eps_area).map_err(|err| reindex(err, k)))
        .collect()
}

fn reindex(err: Error, index: usize) -> Error {
    match err {
        Error::DegenerateStencil { reason, .. } => Error::DegenerateStencil { index, reason },
        e => e,
    }
}

/// Dense impulse basis: `3|V|` rows, one column per edge followed by one per hinge.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub matrix: DMatrix<f64>,
    pub n_stretch: usize,
    pub n_bend: usize,
}

impl BasisMatrix {
    /// `dp = B w`, reshaped per vertex.
    pub fn impulses(&self, w: &[f64]) -> Vec<Vec3> {
        let dp = &self.matrix * DVector::from_column_slice(w);
        dp.as_slice()
            .chunks(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect()
    }
}

/// Assembles `B` at `positions`. Columns: stretch stencils in canonical edge
/// order, then bend stencils in hinge order. Stencil indices in errors count
/// stretch stencils first.
pub fn assemble_basis(
    positions: &[Vec3],
    edges: &[[usize; 2]],
    hinges: &[Hinge],
    eps_len: f64,
    eps_area: f64,
) -> Result<BasisMatrix> {
    let n = positions.len();
    let stretch = stretch_stencils(positions, edges, eps_len)?;
    let bend = bend_stencils(positions, hinges, eps_area).map_err(|e| match e {
        Error::DegenerateStencil { index, reason } => Error::DegenerateStencil {
            index: index + edges.len(),
            reason,
        },
        e => e,
    })?;
    let mut b = DMatrix::zeros(3 * n, stretch.len() + bend.len());
    for (c, s) in stretch.iter().enumerate() {
        for (v, p) in s.apply(1.0) {
            b.fixed_view_mut::<3, 1>(3 * v, c).copy_from(&p);
        }
    }
    for (k, s) in bend.iter().enumerate() {
        for (v, p) in s.apply(1.0) {
            let mut view = b.fixed_view_mut::<3, 1>(3 * v, stretch.len() + k);
            view += p;
        }
    }
    Ok(BasisMatrix {
        matrix: b,
        n_stretch: stretch.len(),
        n_bend: bend.len(),
    })
}

/// Outcome of the planar completeness check.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessReport {
    pub n_vertices: usize,
    pub rank: usize,
    pub expected_rank: usize,
    /// Dimension of the null space of `B^T` (`2|V| - rank`).
    pub nullspace_dim: usize,
    /// `|B^T n|` for unit x-translation, y-translation and in-plane rotation.
    pub rigid_residuals: [f64; 3],
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Non-generic input (e.g. all vertices collinear); no claim is made.
    Inconclusive,
}

pub const RANK_THRESHOLD: f64 = 1e-9;

/// Planar (z = 0) version of `B` with `2|V|` rows and one column per edge.
pub fn planar_basis(
    positions: &[Vec3],
    edges: &[[usize; 2]],
    eps_len: f64,
) -> Result<DMatrix<f64>> {
    let stencils = stretch_stencils(positions, edges, eps_len)?;
    let mut b = DMatrix::zeros(2 * positions.len(), edges.len());
    for (c, s) in stencils.iter().enumerate() {
        for (v, p) in s.apply(1.0) {
            b[(2 * v, c)] = p.x;
            b[(2 * v + 1, c)] = p.y;
        }
    }
    Ok(b)
}

/// Numerical rank: singular values above `RANK_THRESHOLD * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_THRESHOLD * max).count()
}

/// Checks that the planar edge basis has rank `2|V| - 3` and that the null
/// space of `B^T` is spanned by the rigid motions.
pub fn verify_completeness(positions: &[Vec3], edges: &[[usize; 2]]) -> Result<CompletenessReport> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "completeness check needs at least 3 vertices".into(),
        ));
    }
    if positions.iter().any(|p| p.z != 0.0) {
        return Err(Error::InvalidArgument(
            "completeness check is planar: z must be 0".into(),
        ));
    }
    let diameter = crate::mesh::bounding_diameter(positions);
    let b = planar_basis(positions, edges, 1e-9 * diameter)?;
    let rank = numerical_rank(&b);
    let expected_rank = 2 * n - 3;

    let centroid = positions.iter().sum::<Vec3>() / n as f64;
    let mut tx = DVector::zeros(2 * n);
    let mut ty = DVector::zeros(2 * n);
    let mut rot = DVector::zeros(2 * n);
    for (i, p) in positions.iter().enumerate() {
        tx[2 * i] = 1.0;
        ty[2 * i + 1] = 1.0;
        let r = p - centroid;
        rot[2 * i] = -r.y;
        rot[2 * i + 1] = r.x;
    }
    let rigid_residuals = [tx, ty, rot].map(|v| {
        let v = v.normalize();
        (b.transpose() * v).norm()
    });

    let collinear = {
        let d = positions[1..]
            .iter()
            .map(|p| p - positions[0])
            .collect::<Vec<_>>();
        !d.iter().any(|a| {
            d.iter()
                .any(|b| a.cross(b).norm() > 1e-9 * diameter * diameter)
        })
    };
    let verdict = if collinear {
        Verdict::Inconclusive
    } else if rank == expected_rank && rigid_residuals.iter().all(|&r| r <= RANK_THRESHOLD) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CompletenessReport {
        n_vertices: n,
        rank,
        expected_rank,
        nullspace_dim: 2 * n - rank,
        rigid_residuals,
        verdict,
    })
}

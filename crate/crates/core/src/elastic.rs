//! Internal elastic energy and its gradient.
//!
//! Shells: constant-strain StVK membrane triangles plus discrete-shell hinge
//! bending. Solids: Neo-Hookean linear tetrahedra.

use nalgebra::{DMatrix, Matrix2, Matrix3x2, SMatrix};

use crate::impulse_basis::dihedral_angle_and_gradient;
use crate::mesh::Mesh;
use crate::mesh::{Elements, Hinge, MeshKind};
use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// m, shells only
    pub thickness: f64,
    /// N m, shells only
    pub bending_stiffness: f64,
    /// kg / m^3
    pub density: f64,
}

impl MaterialParams {
    /// Light, fairly stiff cloth: 0.2 kg/m^2.
    pub fn cloth() -> MaterialParams {
        MaterialParams {
            youngs_modulus: 1.0e5,
            poisson_ratio: 0.3,
            thickness: 1.0e-3,
            bending_stiffness: 5.0e-2,
            density: 200.0,
        }
    }

    /// Soft rubber-like solid.
    pub fn rubber() -> MaterialParams {
        MaterialParams {
            youngs_modulus: 2.0e5,
            poisson_ratio: 0.3,
            thickness: 0.0,
            bending_stiffness: 0.0,
            density: 1000.0,
        }
    }

    /// Lame parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (
            e / (2.0 * (1.0 + nu)),
            e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        )
    }

    pub fn validate(&self, kind: MeshKind) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("material: {what}")));
        if !(self.youngs_modulus > 0.0) {
            return bad("youngs_modulus must be positive");
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return bad("poisson_ratio must lie in (0, 0.5)");
        }
        if !(self.density > 0.0) {
            return bad("density must be positive");
        }
        if kind == MeshKind::Shell && !(self.thickness > 0.0 && self.bending_stiffness > 0.0) {
            return bad("shells need positive thickness and bending stiffness");
        }
        Ok(())
    }
}

/// Energy value (J) and per-vertex gradient (N, i.e. minus the force).
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub value: f64,
    pub gradient: Vec<Vec3>,
}

/// What to do with a tetrahedron whose determinant drops below a threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionPolicy {
    /// `J <= 0` is an error (reference solver).
    Strict,
    /// Below `j_min` the volumetric term continues as its second-order Taylor
    /// expansion about `j_min`, which is finite for any `J` (training loss).
    Extend { j_min: f64 },
}

impl InversionPolicy {
    pub const TRAINING: InversionPolicy = InversionPolicy::Extend { j_min: 0.05 };
}

#[derive(Debug, Clone)]
pub struct TriangleRest {
    pub dm_inv: Matrix2<f64>,
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct TetRest {
    pub dm_inv: Mat3,
    pub volume: f64,
}

#[derive(Debug, Clone)]
pub struct HingeRest {
    pub theta: f64,
    pub edge_length: f64,
    /// One third of the summed heights of the two triangles over the shared edge.
    pub h_bar: f64,
}

/// Per-element rest quantities, computed once per mesh.
#[derive(Debug, Clone, Default)]
pub struct RestData {
    pub triangles: Vec<TriangleRest>,
    pub tets: Vec<TetRest>,
    pub hinges: Vec<HingeRest>,
    pub edge_lengths: Vec<f64>,
}

/// 2x2 rest edge matrix of a triangle in its own orthonormal rest frame:
/// columns are `X1 - X0` and `X2 - X0` expressed in that frame.
pub fn rest_edge_matrix(x: &[Vec3; 3]) -> Result<Matrix2<f64>> {
    let e1 = x[1] - x[0];
    let e2 = x[2] - x[0];
    let n = e1.cross(&e2);
    let scale = e1.norm().max(e2.norm());
    if !(n.norm() > 1e-14 * scale * scale) {
        return Err(Error::DegenerateElement {
            index: 0,
            reason: "degenerate rest triangle".into(),
        });
    }
    let t1 = e1.normalize();
    let t2 = n.cross(&e1).normalize();
    Ok(Matrix2::new(
        e1.dot(&t1),
        e2.dot(&t1),
        e1.dot(&t2),
        e2.dot(&t2),
    ))
}

impl RestData {
    pub fn new(
        positions: &[Vec3],
        elements: &Elements,
        edges: &[[usize; 2]],
        hinges: &[Hinge],
        diameter: f64,
    ) -> Result<RestData> {
        let mut rest = RestData {
            edge_lengths: edges
                .iter()
                .map(|e| (positions[e[0]] - positions[e[1]]).norm())
                .collect(),
            ..Default::default()
        };
        if let Some(k) = rest
            .edge_lengths
            .iter()
            .position(|&l| !(l > 1e-9 * diameter))
        {
            return Err(Error::DegenerateEdge(edges[k][0], edges[k][1]));
        }
        match elements {
            Elements::Triangles(tris) => {
                for (i, t) in tris.iter().enumerate() {
                    let x = t.map(|v| positions[v]);
                    let dm = rest_edge_matrix(&x).map_err(|e| e.in_element(i))?;
                    rest.triangles.push(TriangleRest {
                        dm_inv: dm.try_inverse().ok_or(Error::DegenerateElement {
                            index: i,
                            reason: "singular rest matrix".into(),
                        })?,
                        area: 0.5 * dm.determinant().abs(),
                    });
                }
                let eps_area = 1e-12 * diameter * diameter;
                for (k, h) in hinges.iter().enumerate() {
                    let x = h.vertices.map(|v| positions[v]);
                    let (theta, _) =
                        dihedral_angle_and_gradient(&x, eps_area).map_err(|e| e.in_element(k))?;
                    let e = (x[1] - x[0]).norm();
                    let area_a = 0.5 * (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
                    let area_b = 0.5 * (x[1] - x[0]).cross(&(x[3] - x[0])).norm();
                    rest.hinges.push(HingeRest {
                        theta,
                        edge_length: e,
                        h_bar: (2.0 * area_a / e + 2.0 * area_b / e) / 3.0,
                    });
                }
            }
            Elements::Tets(tets) => {
                for (i, t) in tets.iter().enumerate() {
                    let dm = Mat3::from_columns(&[
                        positions[t[1]] - positions[t[0]],
                        positions[t[2]] - positions[t[0]],
                        positions[t[3]] - positions[t[0]],
                    ]);
                    let det = dm.determinant();
                    let dm_inv = dm.try_inverse().filter(|_| det != 0.0).ok_or(
                        Error::DegenerateElement {
                            index: i,
                            reason: "zero rest volume".into(),
                        },
                    )?;
                    rest.tets.push(TetRest {
                        dm_inv,
                        volume: det.abs() / 6.0,
                    });
                }
            }
        }
        Ok(rest)
    }
}

/// StVK membrane energy of one triangle:
/// `A t (mu |E|_F^2 + lambda/2 tr(E)^2)`, `E = (F^T F - I) / 2`, `F` 3x2.
pub fn stvk_triangle(
    x: &[Vec3; 3],
    rest: &TriangleRest,
    params: &MaterialParams,
) -> (f64, [Vec3; 3]) {
    let (mu, lambda) = params.lame();
    let ds = Matrix3x2::from_columns(&[x[1] - x[0], x[2] - x[0]]);
    let f = ds * rest.dm_inv;
    let strain = (f.transpose() * f - Matrix2::identity()) * 0.5;
    let tr = strain.trace();
    let psi = mu * strain.norm_squared() + 0.5 * lambda * tr * tr;
    let w = rest.area * params.thickness;
    let p = f * (strain * (2.0 * mu) + Matrix2::identity() * (lambda * tr));
    let h = p * rest.dm_inv.transpose() * w;
    let g1: Vec3 = h.column(0).into();
    let g2: Vec3 = h.column(1).into();
    (w * psi, [-(g1 + g2), g1, g2])
}

fn cofactor(f: &Mat3) -> Mat3 {
    let c0 = f.column(1).cross(&f.column(2));
    let c1 = f.column(2).cross(&f.column(0));
    let c2 = f.column(0).cross(&f.column(1));
    Mat3::from_columns(&[c0, c1, c2])
}

/// Neo-Hookean energy of one tetrahedron:
/// `V (mu/2 (tr F^T F - 3) - mu log J + lambda/2 (log J)^2)`.
pub fn neo_hookean_tet(
    x: &[Vec3; 4],
    rest: &TetRest,
    params: &MaterialParams,
    policy: InversionPolicy,
) -> Result<(f64, [Vec3; 4])> {
    let (mu, lambda) = params.lame();
    let ds = Mat3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
    let f = ds * rest.dm_inv;
    let j = f.determinant();
    // volumetric part g(J) and g'(J)
    let vol = |j: f64| {
        let lj = j.ln();
        (-mu * lj + 0.5 * lambda * lj * lj, (-mu + lambda * lj) / j)
    };
    let (g, dg) = match policy {
        InversionPolicy::Strict => {
            if !(j > 0.0) {
                return Err(Error::Inverted { index: 0, det: j });
            }
            vol(j)
        }
        InversionPolicy::Extend { j_min } if j < j_min => {
            let (g0, d0) = vol(j_min);
            let lj = j_min.ln();
            let dd0 = (mu + lambda - lambda * lj) / (j_min * j_min);
            let dj = j - j_min;
            (g0 + d0 * dj + 0.5 * dd0 * dj * dj, d0 + dd0 * dj)
        }
        InversionPolicy::Extend { .. } => vol(j),
    };
    let psi = 0.5 * mu * (f.norm_squared() - 3.0) + g;
    let p = f * mu + cofactor(&f) * dg;
    let h = p * rest.dm_inv.transpose() * rest.volume;
    let g1: Vec3 = h.column(0).into();
    let g2: Vec3 = h.column(1).into();
    let g3: Vec3 = h.column(2).into();
    Ok((rest.volume * psi, [-(g1 + g2 + g3), g1, g2, g3]))
}

/// Discrete-shell hinge energy `k (theta - theta0)^2 |e0| / h_bar`.
pub fn discrete_shell_bend(
    x: &[Vec3; 4],
    rest: &HingeRest,
    bending_stiffness: f64,
    eps_area: f64,
) -> Result<(f64, [Vec3; 4])> {
    let (theta, grad) = dihedral_angle_and_gradient(x, eps_area)?;
    let mut d = theta - rest.theta;
    // shortest angular distance, so a hinge rotating through +-pi stays continuous
    if d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    } else if d < -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    let w = bending_stiffness * rest.edge_length / rest.h_bar;
    Ok((w * d * d, grad.map(|g| g * (2.0 * w * d))))
}

/// Sums membrane/volumetric and bending energies over the whole mesh. Pinned
/// vertices still receive gradient entries.
pub fn total_internal(
    mesh: &Mesh,
    positions: &[Vec3],
    policy: InversionPolicy,
) -> Result<EnergyReport> {
    let mut value = 0.0;
    let mut gradient = vec![Vec3::zeros(); mesh.n_vertices()];
    let params = mesh.material();
    let rest = mesh.rest();
    match mesh.elements() {
        Elements::Triangles(tris) => {
            for (t, r) in tris.iter().zip(&rest.triangles) {
                let (e, g) = stvk_triangle(&t.map(|v| positions[v]), r, params);
                value += e;
                for k in 0..3 {
                    gradient[t[k]] += g[k];
                }
            }
            let eps_area = mesh.eps_area();
            for (i, (h, r)) in mesh.hinges().iter().zip(&rest.hinges).enumerate() {
                let (e, g) = discrete_shell_bend(
                    &h.vertices.map(|v| positions[v]),
                    r,
                    params.bending_stiffness,
                    eps_area,
                )
                .map_err(|e| e.in_element(i))?;
                value += e;
                for k in 0..4 {
                    gradient[h.vertices[k]] += g[k];
                }
            }
        }
        Elements::Tets(tets) => {
            for (i, (t, r)) in tets.iter().zip(&rest.tets).enumerate() {
                let (e, g) =
                    neo_hookean_tet(&t.map(|v| positions[v]), r, params, policy).map_err(|e| {
                        match e {
                            Error::Inverted { det, .. } => Error::Inverted { index: i, det },
                            e => e.in_element(i),
                        }
                    })?;
                value += e;
                for k in 0..4 {
                    gradient[t[k]] += g[k];
                }
            }
        }
    }
    Ok(EnergyReport { value, gradient })
}

/// Energy value only.
pub fn internal_energy(mesh: &Mesh, positions: &[Vec3], policy: InversionPolicy) -> Result<f64> {
    total_internal(mesh, positions, policy).map(|r| r.value)
}

/// Central-difference Hessian of an element gradient, symmetrised.
fn fd_hessian<const N: usize, const D: usize>(
    x: &[Vec3; N],
    mut grad: impl FnMut(&[Vec3; N]) -> Result<[Vec3; N]>,
) -> Result<SMatrix<f64, D, D>> {
    let scale = x
        .iter()
        .map(|p| (p - x[0]).norm())
        .fold(0.0, f64::max)
        .max(1e-12);
    let h = 1e-6 * scale;
    let mut hess = SMatrix::<f64, D, D>::zeros();
    for k in 0..N {
        for c in 0..3 {
            let (mut xp, mut xm) = (*x, *x);
            xp[k][c] += h;
            xm[k][c] -= h;
            let (gp, gm) = (grad(&xp)?, grad(&xm)?);
            for a in 0..N {
                for b in 0..3 {
                    hess[(3 * a + b, 3 * k + c)] = (gp[a][b] - gm[a][b]) / (2.0 * h);
                }
            }
        }
    }
    Ok((hess + hess.transpose()) * 0.5)
}

/// Assembles the dense `3|V| x 3|V|` Hessian of the internal energy. Element
/// Hessians are central differences of the exact element gradients.
pub fn internal_hessian(
    mesh: &Mesh,
    positions: &[Vec3],
    policy: InversionPolicy,
) -> Result<DMatrix<f64>> {
    let n = mesh.n_vertices();
    let mut hess = DMatrix::zeros(3 * n, 3 * n);
    let params = *mesh.material();
    let rest = mesh.rest();
    let mut scatter = |verts: &[usize], block: &[f64], dim: usize| {
        for (a, &va) in verts.iter().enumerate() {
            for (b, &vb) in verts.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        hess[(3 * va + i, 3 * vb + j)] += block[(3 * b + j) * dim + 3 * a + i];
                    }
                }
            }
        }
    };
    match mesh.elements() {
        Elements::Triangles(tris) => {
            for (t, r) in tris.iter().zip(&rest.triangles) {
                let x = t.map(|v| positions[v]);
                let h = fd_hessian::<3, 9>(&x, |y| Ok(stvk_triangle(y, r, &params).1))?;
                scatter(t, h.as_slice(), 9);
            }
            let eps_area = mesh.eps_area();
            for (hg, r) in mesh.hinges().iter().zip(&rest.hinges) {
                let x = hg.vertices.map(|v| positions[v]);
                let h = fd_hessian::<4, 12>(&x, |y| {
                    Ok(discrete_shell_bend(y, r, params.bending_stiffness, eps_area)?.1)
                })?;
                scatter(&hg.vertices, h.as_slice(), 12);
            }
        }
        Elements::Tets(tets) => {
            for (t, r) in tets.iter().zip(&rest.tets) {
                let x = t.map(|v| positions[v]);
                let h = fd_hessian::<4, 12>(&x, |y| Ok(neo_hookean_tet(y, r, &params, policy)?.1))?;
                scatter(t, h.as_slice(), 12);
            }
        }
    }
    Ok(hess)
}

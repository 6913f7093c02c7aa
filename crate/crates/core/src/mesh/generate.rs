use super::{Elements, Mesh};
use crate::elastic::MaterialParams;
use crate::{Error, Result, Vec3};

/// Regular `nx x ny` vertex grid in the z = 0 plane spanning
/// `[0, size_x] x [0, size_y]`, triangulated with alternating diagonals.
/// Vertex `(i, j)` has index `j * nx + i`.
pub fn generate_sheet(
    nx: usize,
    ny: usize,
    size_x: f64,
    size_y: f64,
    material: MaterialParams,
) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "sheet needs nx, ny >= 2 (got {nx} x {ny})"
        )));
    }
    if !(size_x > 0.0 && size_y > 0.0) {
        return Err(Error::InvalidArgument("sheet size must be positive".into()));
    }
    let mut pos = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pos.push(Vec3::new(
                size_x * i as f64 / (nx - 1) as f64,
                size_y * j as f64 / (ny - 1) as f64,
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut tris = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            } else {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            }
        }
    }
    let n = pos.len();
    Mesh::new(pos, Elements::Triangles(tris), material, vec![false; n])
}

// Hex corner numbering: bit 0 = +x, bit 1 = +y, bit 2 = +z.
const FIVE_TET_EVEN: [[usize; 4]; 5] = [
    [0, 1, 2, 4],
    [3, 2, 1, 7],
    [5, 1, 4, 7],
    [6, 4, 2, 7],
    [1, 2, 4, 7],
];
const FIVE_TET_ODD: [[usize; 4]; 5] = [
    [1, 0, 3, 5],
    [2, 0, 6, 3],
    [4, 0, 5, 6],
    [7, 3, 6, 5],
    [0, 3, 5, 6],
];

/// Cuboid `[0, dims.x] x [0, dims.y] x [0, dims.z]` sampled by an
/// `nx x ny x nz` vertex grid. Each hexahedral cell is split into five
/// tetrahedra; the split alternates with cell parity `(i + j + k) % 2` so face
/// diagonals of neighbouring cells coincide. All tets are positively oriented.
pub fn generate_cuboid(
    nx: usize,
    ny: usize,
    nz: usize,
    dims: Vec3,
    material: MaterialParams,
) -> Result<Mesh> {
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::InvalidArgument(format!(
            "cuboid needs nx, ny, nz >= 2 (got {nx} x {ny} x {nz})"
        )));
    }
    if !dims.iter().all(|&d| d > 0.0) {
        return Err(Error::InvalidArgument(
            "cuboid dimensions must be positive".into(),
        ));
    }
    let id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut pos = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                pos.push(Vec3::new(
                    dims.x * i as f64 / (nx - 1) as f64,
                    dims.y * j as f64 / (ny - 1) as f64,
                    dims.z * k as f64 / (nz - 1) as f64,
                ));
            }
        }
    }
    let mut tets = Vec::with_capacity(5 * (nx - 1) * (ny - 1) * (nz - 1));
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let scheme = if (i + j + k) % 2 == 0 {
                    &FIVE_TET_EVEN
                } else {
                    &FIVE_TET_ODD
                };
                for t in scheme {
                    let mut tet = [corner(t[0]), corner(t[1]), corner(t[2]), corner(t[3])];
                    let vol = super::topology::tet_signed_volume(
                        &pos[tet[0]],
                        &pos[tet[1]],
                        &pos[tet[2]],
                        &pos[tet[3]],
                    );
                    if vol < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    let n = pos.len();
    Mesh::new(pos, Elements::Tets(tets), material, vec![false; n])
}

/// Planar triangle strip with `n_vertices` vertices: vertex `k` sits at
/// `(k / 2, k % 2, 0)` and triangles are `(k, k+1, k+2)` with consistent winding.
/// Used by the 2D completeness check.
pub fn triangle_strip_2d(n_vertices: usize) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    if n_vertices < 3 {
        return Err(Error::InvalidArgument(
            "a strip needs at least 3 vertices".into(),
        ));
    }
    let pos = (0..n_vertices)
        .map(|k| Vec3::new(0.5 * k as f64, (k % 2) as f64, 0.0))
        .collect();
    let tris = (0..n_vertices - 2)
        .map(|k| {
            if k % 2 == 0 {
                [k, k + 1, k + 2]
            } else {
                [k + 1, k, k + 2]
            }
        })
        .collect();
    Ok((pos, tris))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::topology::tet_signed_volume;

    #[test]
    fn sheet_counts() {
        let m = generate_sheet(2, 2, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        assert_eq!(
            (
                m.n_vertices(),
                m.elements().len(),
                m.edges().len(),
                m.hinges().len()
            ),
            (4, 2, 5, 1)
        );
        let m = generate_sheet(3, 2, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        assert_eq!((m.n_vertices(), m.elements().len()), (6, 4));
        assert!(generate_sheet(1, 3, 1.0, 1.0, MaterialParams::cloth()).is_err());
        assert!(m.rest_positions().iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn cuboid_counts_and_volume() {
        let m = generate_cuboid(2, 2, 2, Vec3::repeat(1.0), MaterialParams::rubber()).unwrap();
        assert_eq!(m.n_vertices(), 8);
        assert_eq!(m.elements().len(), 5);
        let m = generate_cuboid(3, 2, 2, Vec3::repeat(1.0), MaterialParams::rubber()).unwrap();
        assert_eq!(m.n_vertices(), 12);
        let mut vol = 0.0;
        if let Elements::Tets(tets) = m.elements() {
            for t in tets {
                let p = m.rest_positions();
                let v = tet_signed_volume(&p[t[0]], &p[t[1]], &p[t[2]], &p[t[3]]);
                assert!(v > 0.0);
                vol += v;
            }
        }
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cuboid_is_conforming() {
        // Every interior triangular face must be shared by exactly two tets,
        // every boundary face by one.
        use std::collections::HashMap;
        let m = generate_cuboid(3, 3, 3, Vec3::repeat(1.0), MaterialParams::rubber()).unwrap();
        let mut faces: HashMap<[usize; 3], usize> = HashMap::new();
        if let Elements::Tets(tets) = m.elements() {
            for t in tets {
                for skip in 0..4 {
                    let mut f: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| t[k]).collect();
                    f.sort_unstable();
                    *faces.entry([f[0], f[1], f[2]]).or_default() += 1;
                }
            }
        }
        assert!(faces.values().all(|&c| c == 1 || c == 2));
        // 2 boundary triangles per boundary quad: 6 sides * 4 quads * 2
        assert_eq!(faces.values().filter(|&&c| c == 1).count(), 48);
    }

    #[test]
    fn strip_is_minimally_rigid() {
        for n in 3..=10 {
            let (p, t) = triangle_strip_2d(n).unwrap();
            let (e, _) = crate::mesh::build_topology(&Elements::Triangles(t)).unwrap();
            assert_eq!(p.len(), n);
            assert_eq!(e.len(), 2 * n - 3);
        }
    }
}

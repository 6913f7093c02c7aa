use super::{Mesh, MeshKind, SimState};
use crate::{Error, Mat3, Result, Vec3};

/// `x -> A x + b` applied to positions; velocities are left alone.
pub fn deform_affine(state: &SimState, a: &Mat3, b: &Vec3) -> SimState {
    SimState {
        positions: state.positions.iter().map(|p| a * p + b).collect(),
        velocities: state.velocities.clone(),
        time: state.time,
    }
}

pub fn bezier_point(cp: &[Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    cp[0] * (s * s * s)
        + cp[1] * (3.0 * s * s * t)
        + cp[2] * (3.0 * s * t * t)
        + cp[3] * (t * t * t)
}

fn bezier_tangent(cp: &[Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    ((cp[1] - cp[0]) * (s * s) + (cp[2] - cp[1]) * (2.0 * s * t) + (cp[3] - cp[2]) * (t * t)) * 3.0
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];
const SEGMENTS: usize = 256;

/// Cubic Bezier curve with an arclength parametrisation.
#[derive(Debug, Clone)]
pub struct BezierArc {
    cp: [Vec3; 4],
    cumulative: Vec<f64>,
}

impl BezierArc {
    pub fn new(control_points: [Vec3; 4]) -> Result<BezierArc> {
        let polygon: f64 = control_points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum();
        let scale = control_points.iter().map(|p| p.norm()).fold(1.0, f64::max);
        if !(polygon > 1e-12 * scale) {
            return Err(Error::InvalidArgument(
                "degenerate Bezier control polygon".into(),
            ));
        }
        let mut arc = BezierArc {
            cp: control_points,
            cumulative: Vec::with_capacity(SEGMENTS + 1),
        };
        arc.cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..SEGMENTS {
            let (a, b) = (k as f64 / SEGMENTS as f64, (k + 1) as f64 / SEGMENTS as f64);
            acc += arc.length_between(a, b);
            arc.cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument(
                "Bezier curve has zero length".into(),
            ));
        }
        Ok(arc)
    }

    fn length_between(&self, a: f64, b: f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS.iter())
            .map(|(x, w)| w * bezier_tangent(&self.cp, mid + half * x).norm())
            .sum::<f64>()
            * half
    }

    pub fn length(&self) -> f64 {
        self.cumulative[SEGMENTS]
    }

    pub fn point(&self, t: f64) -> Vec3 {
        bezier_point(&self.cp, t)
    }

    /// Curve parameter at arclength `s` in `[0, length]`.
    pub fn param_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let k = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(k) => return k as f64 / SEGMENTS as f64,
            Err(k) => (k - 1).min(SEGMENTS - 1),
        };
        let (mut lo, mut hi) = (k as f64 / SEGMENTS as f64, (k + 1) as f64 / SEGMENTS as f64);
        let base = self.cumulative[k];
        let mut t = lo + (hi - lo) * (s - base) / (self.cumulative[k + 1] - base);
        // safeguarded Newton on g(t) = len(lo_k, t) - (s - base)
        for _ in 0..60 {
            let g = self.length_between(k as f64 / SEGMENTS as f64, t) - (s - base);
            if g.abs() <= 1e-15 * self.length().max(1.0) {
                break;
            }
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = bezier_tangent(&self.cp, t).norm();
            let next = t - g / d;
            t = if d > 0.0 && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        t
    }

    /// Point at arclength `s`; beyond the ends the curve is continued along the
    /// end tangents so the map stays isometric.
    pub fn point_at_arclength(&self, s: f64) -> Vec3 {
        let len = self.length();
        if s < 0.0 {
            let tan = bezier_tangent(&self.cp, 0.0);
            let dir = if tan.norm() > 0.0 {
                tan.normalize()
            } else {
                (self.point(1e-6) - self.cp[0]).normalize()
            };
            return self.cp[0] + dir * s;
        }
        if s > len {
            let tan = bezier_tangent(&self.cp, 1.0);
            let dir = if tan.norm() > 0.0 {
                tan.normalize()
            } else {
                (self.cp[3] - self.point(1.0 - 1e-6)).normalize()
            };
            return self.cp[3] + dir * (s - len);
        }
        self.point(self.param_at(s))
    }
}

/// Bends a sheet along a cubic Bezier curve.
///
/// The rest x axis is mapped by arclength onto the curve: a vertex with rest
/// coordinates `(X, Y, Z)` goes to `c(s = X - X_min) + (0, Y, Z)`, so the
/// transverse axis keeps its rest direction. For control points in a plane
/// of constant y this is an isometric (cylindrical) bend.
pub fn deform_bezier(mesh: &Mesh, state: &SimState, control_points: [Vec3; 4]) -> Result<SimState> {
    if mesh.kind() != MeshKind::Shell {
        return Err(Error::InvalidArgument(
            "Bezier deformation needs a shell mesh".into(),
        ));
    }
    let arc = BezierArc::new(control_points)?;
    let x_min = mesh
        .rest_positions()
        .iter()
        .map(|p| p.x)
        .fold(f64::INFINITY, f64::min);
    let positions = mesh
        .rest_positions()
        .iter()
        .map(|p| arc.point_at_arclength(p.x - x_min) + Vec3::new(0.0, p.y, p.z))
        .collect();
    Ok(SimState {
        positions,
        velocities: state.velocities.clone(),
        time: state.time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastic::MaterialParams;
    use crate::mesh::generate_sheet;

    #[test]
    fn affine_identity_and_scaling() {
        let m = crate::mesh::generate_cuboid(2, 2, 2, Vec3::repeat(1.0), MaterialParams::rubber())
            .unwrap();
        let s = m.rest_state();
        assert_eq!(deform_affine(&s, &Mat3::identity(), &Vec3::zeros()), s);
        let big = deform_affine(&s, &(Mat3::identity() * 2.0), &Vec3::zeros());
        let ext = crate::mesh::bounding_diameter(&big.positions) / m.diameter();
        assert!((ext - 2.0).abs() < 1e-14);
        // volume of the scaled cube
        let mut vol = 0.0;
        if let crate::mesh::Elements::Tets(tets) = m.elements() {
            for t in tets {
                let p = &big.positions;
                vol += crate::mesh::topology::tet_signed_volume(
                    &p[t[0]], &p[t[1]], &p[t[2]], &p[t[3]],
                );
            }
        }
        assert!((vol - 8.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_unit_spacing_is_identity() {
        let m = generate_sheet(4, 3, 2.0, 1.0, MaterialParams::cloth()).unwrap();
        let cp = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::x() * 3.0];
        let out = deform_bezier(&m, &m.rest_state(), cp).unwrap();
        for (a, b) in out.positions.iter().zip(m.rest_positions()) {
            assert!((a - b).norm() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn degenerate_polygon_and_solid_rejected() {
        let m = generate_sheet(3, 3, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(deform_bezier(&m, &m.rest_state(), [p; 4]).is_err());
        let c = crate::mesh::generate_cuboid(2, 2, 2, Vec3::repeat(1.0), MaterialParams::rubber())
            .unwrap();
        let cp = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::x() * 3.0];
        assert!(deform_bezier(&c, &c.rest_state(), cp).is_err());
    }
}

//! Linear/angular momentum and the minimal correction that restores target momenta.

use nalgebra::{Matrix6, Vector6};

use crate::mesh::{Mesh, SimState};
use crate::{Error, Mat3, Result, Vec3};

/// Linear momentum `p` and angular momentum `l` about the origin.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MomentumPair {
    pub p: Vec3,
    pub l: Vec3,
}

impl MomentumPair {
    pub fn of(masses: &[f64], positions: &[Vec3], velocities: &[Vec3]) -> MomentumPair {
        MomentumPair {
            p: linear_momentum(masses, velocities),
            l: angular_momentum(masses, positions, velocities),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.p.norm_squared() + self.l.norm_squared()).sqrt()
    }
}

pub fn linear_momentum(masses: &[f64], velocities: &[Vec3]) -> Vec3 {
    masses.iter().zip(velocities).map(|(m, v)| v * *m).sum()
}

pub fn angular_momentum(masses: &[f64], positions: &[Vec3], velocities: &[Vec3]) -> Vec3 {
    masses
        .iter()
        .zip(positions)
        .zip(velocities)
        .map(|((m, x), v)| x.cross(v) * *m)
        .sum()
}

/// Momenta after applying the external impulse `dt f` at the current positions.
pub fn target_momenta(mesh: &Mesh, state: &SimState, forces: &[Vec3], dt: f64) -> MomentumPair {
    let now = MomentumPair::of(mesh.masses(), &state.positions, &state.velocities);
    let impulse: Vec3 = forces.iter().sum();
    let torque: Vec3 = state
        .positions
        .iter()
        .zip(forces)
        .map(|(x, f)| x.cross(f))
        .sum();
    MomentumPair {
        p: now.p + impulse * dt,
        l: now.l + torque * dt,
    }
}

/// Result of [`project_velocities`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub velocities: Vec<Vec3>,
    /// Multipliers `[lambda_p; lambda_l]`.
    pub multipliers: Vector6<f64>,
    /// Set when the 6x6 system was singular or ill-conditioned and the
    /// pseudo-inverse was used.
    pub used_pseudo_inverse: bool,
}

pub const CONDITION_LIMIT: f64 = 1e12;

fn skew(x: &Vec3) -> Mat3 {
    Mat3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// Corrects `v_fd` by the smallest mass-weighted change that makes its linear
/// and angular momentum (about the origin, at `positions`) equal `targets`.
///
/// The correction is the rigid field `dv_i = -(lambda_p + lambda_l x x_i)`.
pub fn project_velocities(
    masses: &[f64],
    positions: &[Vec3],
    v_fd: &[Vec3],
    targets: &MomentumPair,
) -> Result<Projection> {
    if masses.len() != positions.len() || masses.len() != v_fd.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} masses, {} positions, {} velocities",
            masses.len(),
            positions.len(),
            v_fd.len()
        )));
    }
    let now = MomentumPair::of(masses, positions, v_fd);
    let c = Vector6::from_iterator(
        (now.p - targets.p)
            .iter()
            .chain((now.l - targets.l).iter())
            .copied(),
    );
    if c.iter().all(|&ci| ci == 0.0) {
        return Ok(Projection {
            velocities: v_fd.to_vec(),
            multipliers: Vector6::zeros(),
            used_pseudo_inverse: false,
        });
    }

    // grad C M^-1 grad C^T = sum m_i [[I, X_i^T], [X_i, X_i X_i^T]] with X_i = [x_i]_x
    let mut a = Matrix6::<f64>::zeros();
    for (m, x) in masses.iter().zip(positions) {
        let s = skew(x);
        let mut block = Matrix6::<f64>::zeros();
        block
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Mat3::identity());
        block.fixed_view_mut::<3, 3>(0, 3).copy_from(&s.transpose());
        block.fixed_view_mut::<3, 3>(3, 0).copy_from(&s);
        block
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(s * s.transpose()));
        a += block * *m;
    }

    let eig = a.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e.abs()), hi.max(e.abs()))
    });
    let well_posed = hi > 0.0 && lo * CONDITION_LIMIT > hi;
    let (lambda, used_pseudo_inverse) = match a.cholesky().filter(|_| well_posed) {
        Some(chol) => {
            let mut l = chol.solve(&c);
            let r = c - a * l;
            l += chol.solve(&r);
            (l, false)
        }
        None => {
            let svd = a.svd(true, true);
            let tol = svd.singular_values.max() * 1e-12;
            let l = svd
                .solve(&c, tol)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (l, true)
        }
    };
    let lp = Vec3::new(lambda[0], lambda[1], lambda[2]);
    let ll = Vec3::new(lambda[3], lambda[4], lambda[5]);
    let velocities = positions
        .iter()
        .zip(v_fd)
        .map(|(x, v)| v - lp - ll.cross(x))
        .collect();
    Ok(Projection {
        velocities,
        multipliers: lambda,
        used_pseudo_inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_examples() {
        assert_eq!(
            linear_momentum(&[2.0], &[Vec3::x()]),
            Vec3::new(2.0, 0.0, 0.0)
        );
        assert_eq!(
            linear_momentum(&[1.0, 1.0], &[Vec3::x(), -Vec3::x()]),
            Vec3::zeros()
        );
        assert_eq!(
            angular_momentum(&[1.0], &[Vec3::x()], &[Vec3::y()]),
            Vec3::z()
        );
        let x = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        let v = [x[0] * 0.3, x[1] * -2.0];
        assert_eq!(angular_momentum(&[1.0, 3.0], &x, &v), Vec3::zeros());
    }

    #[test]
    fn feasible_input_is_untouched() {
        let m = [1.0, 2.0, 3.0];
        let x = [Vec3::x(), Vec3::y(), Vec3::new(0.3, 0.2, 1.0)];
        let v = [Vec3::new(0.1, 0.2, 0.3), Vec3::z(), -Vec3::x()];
        let t = MomentumPair::of(&m, &x, &v);
        let out = project_velocities(&m, &x, &v, &t).unwrap();
        assert_eq!(out.velocities, v.to_vec());
        assert_eq!(out.multipliers, Vector6::zeros());
    }

    #[test]
    fn two_masses_are_brought_to_rest() {
        let x = [Vec3::x(), -Vec3::x()];
        let v = [Vec3::y(), Vec3::y()];
        let zero = MomentumPair {
            p: Vec3::zeros(),
            l: Vec3::zeros(),
        };
        let out = project_velocities(&[1.0, 1.0], &x, &v, &zero).unwrap();
        assert!(out.used_pseudo_inverse);
        for vi in &out.velocities {
            assert!(vi.norm() < 1e-12, "{vi}");
        }
    }

    #[test]
    fn constraints_hold_after_projection() {
        let m = [1.0, 2.0, 0.5, 1.5];
        let x = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 1.0)];
        let v = [
            Vec3::new(0.3, -0.2, 0.1),
            Vec3::z(),
            -Vec3::x(),
            Vec3::y() * 2.0,
        ];
        let t = MomentumPair {
            p: Vec3::new(0.5, 0.0, -1.0),
            l: Vec3::new(0.0, 2.0, 0.1),
        };
        let out = project_velocities(&m, &x, &v, &t).unwrap();
        assert!(!out.used_pseudo_inverse);
        let got = MomentumPair::of(&m, &x, &out.velocities);
        assert!((got.p - t.p).norm() < 1e-12 && (got.l - t.l).norm() < 1e-12);
    }

    #[test]
    fn targets_follow_impulse() {
        let mesh =
            crate::mesh::generate_sheet(3, 3, 1.0, 1.0, crate::elastic::MaterialParams::cloth())
                .unwrap();
        let state = mesh.rest_state();
        let mut f = vec![Vec3::zeros(); 9];
        f[8] = Vec3::new(0.0, 0.0, 2.0);
        let t = target_momenta(&mesh, &state, &f, 0.1);
        let x8 = state.positions[8];
        assert!((t.p - Vec3::new(0.0, 0.0, 0.2)).norm() < 1e-15);
        assert!((t.l - x8.cross(&f[8]) * 0.1).norm() < 1e-15);
    }
}

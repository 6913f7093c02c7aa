use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::elastic::{total_internal, InversionPolicy};
use crate::mesh::{Mesh, MeshKind, SimState};
use crate::{Error, Result, Vec3};

/// Position noise added to training states.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of the per-coordinate Gaussian noise, m.
    pub global_sigma: f64,
    /// Radius of the local patch as a fraction of the longest bounding-box side.
    pub local_radius_fraction: f64,
    /// Per-vertex magnitudes of the local displacement are uniform in this range, m.
    pub local_magnitude: (f64, f64),
}

impl NoiseConfig {
    pub fn for_kind(kind: MeshKind) -> NoiseConfig {
        match kind {
            MeshKind::Shell => NoiseConfig {
                global_sigma: 1e-3,
                local_radius_fraction: 0.25,
                local_magnitude: (0.0, 0.05),
            },
            MeshKind::Solid => NoiseConfig {
                global_sigma: 6e-4,
                local_radius_fraction: 0.5,
                local_magnitude: (0.0, 0.05),
            },
        }
    }

    pub fn none() -> NoiseConfig {
        NoiseConfig {
            global_sigma: 0.0,
            local_radius_fraction: 0.0,
            local_magnitude: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.local_magnitude;
        if !(self.global_sigma >= 0.0 && self.local_radius_fraction >= 0.0 && lo >= 0.0 && lo <= hi)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid noise config {self:?}"
            )));
        }
        Ok(())
    }
}

const MAX_RETRIES: usize = 20;

fn longest_side(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).max()
}

/// Gaussian noise on all free vertices followed by one shared-direction
/// displacement of a random ball. For solids, draws that invert a tetrahedron
/// are redrawn.
pub fn apply_noise(
    mesh: &Mesh,
    state: &SimState,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<SimState> {
    cfg.validate()?;
    let free: Vec<bool> = mesh.pinned().iter().map(|p| !p).collect();
    let radius = cfg.local_radius_fraction * longest_side(mesh.rest_positions());
    for _ in 0..MAX_RETRIES {
        let mut out = state.clone();
        if cfg.global_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.global_sigma).expect("finite sigma");
            for (x, &f) in out.positions.iter_mut().zip(&free) {
                let d = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
                if f {
                    *x += d;
                }
            }
        }
        if cfg.local_magnitude.1 > 0.0 && radius > 0.0 {
            let center = state.positions[rng.random_range(0..state.len())];
            let dir = Vec3::from(<UnitSphere as Distribution<[f64; 3]>>::sample(
                &UnitSphere,
                rng,
            ));
            let (lo, hi) = cfg.local_magnitude;
            for (k, x) in out.positions.iter_mut().enumerate() {
                if free[k] && (state.positions[k] - center).norm() <= radius {
                    *x += dir * rng.random_range(lo..=hi);
                }
            }
        }
        if mesh.kind() == MeshKind::Shell
            || total_internal(mesh, &out.positions, InversionPolicy::Strict).is_ok()
        {
            return Ok(out);
        }
    }
    Err(Error::InvalidArgument(format!(
        "noise inverted the mesh in {MAX_RETRIES} consecutive draws"
    )))
}

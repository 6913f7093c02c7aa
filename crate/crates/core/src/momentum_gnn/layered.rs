use crate::impulse_basis::{bend_stencils, stretch_stencils};
use crate::mesh::Hinge;
use crate::{Error, Result, Vec3};

/// Impulse magnitudes for one layer: one per edge, one per hinge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerMagnitudes {
    pub stretch: Vec<f64>,
    pub bend: Vec<f64>,
}

/// `a_i = sum of stencil impulses on i / (m_i dt)` with stencils evaluated at
/// `positions`. Pinned vertices get zero; their impulses are dropped.
#[allow(clippy::too_many_arguments)]
pub fn layer_accelerations(
    positions: &[Vec3],
    masses: &[f64],
    pinned: &[bool],
    edges: &[[usize; 2]],
    hinges: &[Hinge],
    magnitudes: &LayerMagnitudes,
    dt: f64,
    eps: (f64, f64),
) -> Result<Vec<Vec3>> {
    if magnitudes.stretch.len() != edges.len() || magnitudes.bend.len() != hinges.len() {
        return Err(Error::InvalidArgument(format!(
            "{} stretch / {} bend magnitudes for {} edges / {} hinges",
            magnitudes.stretch.len(),
            magnitudes.bend.len(),
            edges.len(),
            hinges.len()
        )));
    }
    let mut dp = vec![Vec3::zeros(); positions.len()];
    for (s, &w) in stretch_stencils(positions, edges, eps.0)?
        .iter()
        .zip(&magnitudes.stretch)
    {
        for (v, p) in s.apply(w) {
            dp[v] += p;
        }
    }
    for (s, &w) in bend_stencils(positions, hinges, eps.1)?
        .iter()
        .zip(&magnitudes.bend)
    {
        for (v, p) in s.apply(w) {
            dp[v] += p;
        }
    }
    Ok(dp
        .iter()
        .zip(masses)
        .zip(pinned)
        .map(|((p, m), &pin)| if pin { Vec3::zeros() } else { p / (m * dt) })
        .collect())
}

/// Applies `x <- x + dt^2 a(x)` once per layer, refreshing the stencils from
/// the current positions every time. Returns every intermediate configuration,
/// starting with `start`.
#[allow(clippy::too_many_arguments)]
pub fn layered_update(
    start: &[Vec3],
    masses: &[f64],
    pinned: &[bool],
    edges: &[[usize; 2]],
    hinges: &[Hinge],
    layers: &[LayerMagnitudes],
    dt: f64,
    eps: (f64, f64),
) -> Result<Vec<Vec<Vec3>>> {
    let mut out = vec![start.to_vec()];
    for (l, mags) in layers.iter().enumerate() {
        let x = out.last().expect("non-empty");
        let a = layer_accelerations(x, masses, pinned, edges, hinges, mags, dt, eps)
            .map_err(|e| e.at_layer(l))?;
        let next = x
            .iter()
            .zip(&a)
            .map(|(xi, ai)| xi + ai * (dt * dt))
            .collect();
        out.push(next);
    }
    Ok(out)
}

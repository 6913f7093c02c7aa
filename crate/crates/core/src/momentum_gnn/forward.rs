use std::f64::consts::PI;

use super::features::{edge_features, node_features};
use super::{GraphTopology, Model, Variant};
use crate::integrator::{eval_external, momentum_step, ExternalForces};
use crate::mesh::{Mesh, SimState};
use crate::neural::{Graph, Tensor, Var};
use crate::velocity_projection::{project_velocities, target_momenta};
use crate::{Error, Result, Vec3};

/// Everything about one step that does not depend on the parameters.
#[derive(Debug, Clone)]
pub struct StepInput {
    pub topo: GraphTopology,
    pub dt: f64,
    pub x_i: Vec<Vec3>,
    pub v_i: Vec<Vec3>,
    pub f_ext: Vec<Vec3>,
    pub x_m: Vec<Vec3>,
    /// Normalised node features.
    pub node: Tensor,
    /// Normalised directed-edge features at `x_m`.
    pub edge: Tensor,
    /// `dt / m_i`, zero for pinned vertices: `x += P * step`.
    pub step: Tensor,
    pub rest_length: Tensor,
    pub rest_theta: Vec<f64>,
    pub stretch_scale: f64,
    pub bend_scale: f64,
    pub accel_scale: f64,
    pub eps_len: f64,
    pub eps_area: f64,
    geo_mean: [f64; 2],
    geo_std: [f64; 2],
}

impl StepInput {
    pub fn new(
        model: &Model,
        mesh: &Mesh,
        state: &SimState,
        forces: &ExternalForces,
        dt: f64,
    ) -> Result<StepInput> {
        mesh.validate_state(state)?;
        forces.validate(mesh.n_vertices())?;
        if mesh.kind() != model.config.kind {
            return Err(Error::InvalidArgument(format!(
                "model is for {} meshes, got {}",
                model.config.kind.as_str(),
                mesh.kind().as_str()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let f_ext = eval_external(mesh, state, forces);
        let x_m = momentum_step(mesh, state, &f_ext, dt);
        let node = model
            .normalizer
            .node
            .apply(&node_features(mesh, state, &f_ext));
        let edge = model.normalizer.edge.apply(&edge_features(mesh, &x_m)?);
        let step = Tensor::column(
            mesh.masses()
                .iter()
                .zip(mesh.pinned())
                .map(|(m, &p)| if p { 0.0 } else { dt / m })
                .collect(),
        );
        let (ml, mm) = (mesh.mean_rest_length(), mesh.mean_mass());
        let c = model.config.impulse_scale;
        let (geo_mean, geo_std) = model.normalizer.geometry();
        Ok(StepInput {
            topo: GraphTopology::new(mesh),
            dt,
            x_i: state.positions.clone(),
            v_i: state.velocities.clone(),
            f_ext,
            x_m,
            node,
            edge,
            step,
            rest_length: Tensor::column(mesh.rest_lengths().to_vec()),
            rest_theta: mesh.rest().hinges.iter().map(|h| h.theta).collect(),
            stretch_scale: c * mm * ml / dt,
            bend_scale: c * mm * ml * ml / dt,
            accel_scale: c * ml / (dt * dt),
            eps_len: mesh.eps_len(),
            eps_area: mesh.eps_area(),
            geo_mean,
            geo_std,
        })
    }
}

/// Stencils and intrinsic quantities at one configuration, inside the graph.
struct Geometry {
    /// `(x_a - x_b) / |x_a - x_b|` per mesh edge.
    direction: Var,
    strain: Var,
    /// Dihedral deviation from rest, per hinge.
    dihedral: Option<Var>,
    /// `d theta / d x` for hinge slots 0..4.
    bend_grads: Option<[Var; 4]>,
}

fn degenerate(index: usize, reason: String) -> Error {
    Error::DegenerateStencil { index, reason }
}

fn geometry(g: &mut Graph, inp: &StepInput, x: Var) -> Result<Geometry> {
    let t = &inp.topo;
    let xa = g.gather_rows(x, &t.edge_a)?;
    let xb = g.gather_rows(x, &t.edge_b)?;
    let d = g.sub(xa, xb)?;
    let len = g.norm_rows(d)?;
    if let Some(k) = g.value(len).data().iter().position(|&l| !(l > inp.eps_len)) {
        return Err(degenerate(
            k,
            format!(
                "edge length {:e} below {:e}",
                g.value(len).data()[k],
                inp.eps_len
            ),
        ));
    }
    let direction = g.div_col(d, len)?;
    let rest = g.constant(inp.rest_length.clone());
    let stretch = g.sub(len, rest)?;
    let strain = g.div_col(stretch, rest)?;
    if t.n_hinges == 0 {
        return Ok(Geometry {
            direction,
            strain,
            dihedral: None,
            bend_grads: None,
        });
    }

    let [s0, s1, s2, s3] = &t.hinge_slots;
    let x0 = g.gather_rows(x, s0)?;
    let x1 = g.gather_rows(x, s1)?;
    let x2 = g.gather_rows(x, s2)?;
    let x3 = g.gather_rows(x, s3)?;
    let e = g.sub(x1, x0)?;
    let d2 = g.sub(x2, x0)?;
    let d3 = g.sub(x3, x0)?;
    let na = g.cross_rows(e, d2)?;
    let nb = g.cross_rows(d3, e)?;
    let na2 = g.dot_rows(na, na)?;
    let nb2 = g.dot_rows(nb, nb)?;
    for (n2, name) in [(na2, "a"), (nb2, "b")] {
        if let Some(k) = g
            .value(n2)
            .data()
            .iter()
            .position(|&q| !(0.5 * q.sqrt() > inp.eps_area))
        {
            let area = 0.5 * g.value(n2).data()[k].sqrt();
            return Err(degenerate(
                t.n_edges + k,
                format!("triangle {name} area {area:e} below {:e}", inp.eps_area),
            ));
        }
    }
    let e_len = g.norm_rows(e)?;
    let cross = g.cross_rows(na, nb)?;
    let sin_raw = g.dot_rows(cross, e)?;
    let sin = g.div_col(sin_raw, e_len)?;
    let cos = g.dot_rows(na, nb)?;
    let theta = g.atan2(sin, cos)?;
    // deviation from rest wrapped into (-pi, pi]; the wrap is a constant shift
    let shift: Vec<f64> = g
        .value(theta)
        .data()
        .iter()
        .zip(&inp.rest_theta)
        .map(|(th, r)| r + 2.0 * PI * ((th - r - PI) / (2.0 * PI)).ceil())
        .collect();
    let shift = g.constant(Tensor::column(shift));
    let dihedral = g.sub(theta, shift)?;

    let na_bar = g.div_col(na, na2)?;
    let nb_bar = g.div_col(nb, nb2)?;
    let ta_raw = g.dot_rows(d2, e)?;
    let ta = g.div_col(ta_raw, e_len)?;
    let tb_raw = g.dot_rows(d3, e)?;
    let tb = g.div_col(tb_raw, e_len)?;
    let g1a = g.mul_col(na_bar, ta)?;
    let g1b = g.mul_col(nb_bar, tb)?;
    let g1 = g.add(g1a, g1b)?;
    let g2 = g.mul_col(na_bar, e_len)?;
    let g2 = g.neg(g2);
    let g3 = g.mul_col(nb_bar, e_len)?;
    let g3 = g.neg(g3);
    let s12 = g.add(g1, g2)?;
    let s123 = g.add(s12, g3)?;
    let g0 = g.neg(s123);
    Ok(Geometry {
        direction,
        strain,
        dihedral: Some(dihedral),
        bend_grads: Some([g0, g1, g2, g3]),
    })
}

/// Normalised `[dihedral, strain]` per directed edge.
fn geometry_inputs(g: &mut Graph, inp: &StepInput, geo: &Geometry) -> Result<Var> {
    let t = &inp.topo;
    let dihedral_edge = match geo.dihedral {
        Some(d) => g.scatter_add_rows(d, &t.hinge_edge, t.n_edges)?,
        None => g.constant(Tensor::zeros(t.n_edges, 1)),
    };
    let both = g.concat_cols(&[dihedral_edge, geo.strain])?;
    let directed = g.gather_rows(both, &t.directed_edge)?;
    let shift = g.constant(Tensor::row_vector(vec![-inp.geo_mean[0], -inp.geo_mean[1]]));
    let centred = g.add_row(directed, shift)?;
    let scale = g.constant(Tensor::from_fn(2 * t.n_edges, 2, |_, c| {
        1.0 / inp.geo_std[c]
    }));
    g.mul(centred, scale)
}

struct Latents {
    nodes: Var,
    edges: Var,
}

fn encode(g: &mut Graph, model: &Model, inp: &StepInput) -> Result<Latents> {
    let node_in = g.constant(inp.node.clone());
    let edge_in = g.constant(inp.edge.clone());
    Ok(Latents {
        nodes: model.node_encoder.forward(g, node_in)?,
        edges: model.edge_encoder.forward(g, edge_in)?,
    })
}

fn message_layer(
    g: &mut Graph,
    model: &Model,
    layer: usize,
    inp: &StepInput,
    z: Latents,
    geo_in: Var,
) -> Result<Latents> {
    let t = &inp.topo;
    let p = &model.layers[layer];
    let r_recv = g.gather_rows(z.nodes, &t.receivers)?;
    let r_send = g.gather_rows(z.nodes, &t.senders)?;
    let msg_in = g.concat_cols(&[z.edges, r_recv, r_send, geo_in])?;
    let msg = p.edge.forward(g, msg_in)?;
    let edges = g.add(z.edges, msg)?;
    let agg = g.scatter_add_rows(msg, &t.receivers, t.n_vertices)?;
    let vin = g.concat_cols(&[z.nodes, agg])?;
    let dv = p.vertex.forward(g, vin)?;
    let nodes = g.add(z.nodes, dv)?;
    Ok(Latents { nodes, edges })
}

/// Graph nodes produced by [`build_momentum`].
#[derive(Debug, Clone)]
pub struct GraphOutputs {
    /// `x^(0) = x_m, ..., x^(L)`.
    pub positions: Vec<Var>,
    /// Scaled stretch magnitudes per layer (`E x 1`).
    pub stretch: Vec<Var>,
    /// Scaled bend magnitudes per layer (`H x 1`), shells only.
    pub bend: Vec<Option<Var>>,
}

/// Records the layered MomentumGNN step in `g`.
pub fn build_momentum(g: &mut Graph, model: &Model, inp: &StepInput) -> Result<GraphOutputs> {
    if model.config.variant != Variant::Momentum {
        return Err(Error::InvalidArgument(
            "build_momentum needs a momentum model".into(),
        ));
    }
    let t = &inp.topo;
    let mut z = encode(g, model, inp)?;
    let mut x = g.constant(Tensor::from_vec3s(&inp.x_m));
    let step = g.constant(inp.step.clone());
    let mut out = GraphOutputs {
        positions: vec![x],
        stretch: Vec::new(),
        bend: Vec::new(),
    };
    for l in 0..model.config.layers {
        let layer = |e: Error| e.at_layer(l);
        let geo = geometry(g, inp, x).map_err(layer)?;
        let geo_in = geometry_inputs(g, inp, &geo).map_err(layer)?;
        z = message_layer(g, model, l, inp, z, geo_in).map_err(layer)?;

        let s_even = g.gather_rows(z.edges, &t.even)?;
        let s_odd = g.gather_rows(z.edges, &t.odd)?;
        let pooled = g.maximum(s_even, s_odd)?;
        let w_raw = model.decode_stretch(g, l, pooled).map_err(layer)?;
        let w = g.scale(w_raw, inp.stretch_scale);
        let imp = g.mul_col(geo.direction, w)?;
        let on_a = g.scatter_add_rows(imp, &t.edge_a, t.n_vertices)?;
        let on_b = g.scatter_add_rows(imp, &t.edge_b, t.n_vertices)?;
        let mut total = g.sub(on_a, on_b)?;
        out.stretch.push(w);

        let bend = match (geo.bend_grads, model.layers[l].bend.is_some()) {
            (Some(grads), true) => {
                let wb_raw = model
                    .decode_bend(g, l, pooled, t, &t.hinge_edge)
                    .map_err(layer)?;
                let wb = g.scale(wb_raw, inp.bend_scale);
                for (slot, gk) in t.hinge_slots.iter().zip(grads) {
                    let imp = g.mul_col(gk, wb)?;
                    let on = g.scatter_add_rows(imp, slot, t.n_vertices)?;
                    total = g.add(total, on)?;
                }
                Some(wb)
            }
            _ => None,
        };
        out.bend.push(bend);

        let dx = g.mul_col(total, step)?;
        x = g.add(x, dx)?;
        out.positions.push(x);
    }
    Ok(out)
}

/// Records the baseline step in `g` and returns the predicted positions.
pub fn build_baseline(g: &mut Graph, model: &Model, inp: &StepInput) -> Result<Var> {
    let dec = model
        .vertex_decoder
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("build_baseline needs a baseline model".into()))?;
    let mut z = encode(g, model, inp)?;
    let x_m = g.constant(Tensor::from_vec3s(&inp.x_m));
    let geo = geometry(g, inp, x_m)?;
    let geo_in = geometry_inputs(g, inp, &geo)?;
    for l in 0..model.config.layers {
        z = message_layer(g, model, l, inp, z, geo_in).map_err(|e| e.at_layer(l))?;
    }
    let a_raw = dec.forward(g, z.nodes)?;
    let free = g.constant(Tensor::column(
        inp.step
            .data()
            .iter()
            .map(|&s| if s > 0.0 { 1.0 } else { 0.0 })
            .collect(),
    ));
    let a_free = g.mul_col(a_raw, free)?;
    let dx = g.scale(a_free, inp.accel_scale * inp.dt * inp.dt);
    let ballistic: Vec<Vec3> = inp
        .x_i
        .iter()
        .zip(&inp.v_i)
        .zip(inp.step.data())
        .map(|((x, v), &s)| if s > 0.0 { x + v * inp.dt } else { *x })
        .collect();
    let base = g.constant(Tensor::from_vec3s(&ballistic));
    g.add(base, dx)
}

/// How the end-of-step velocity is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityMode {
    /// Finite-difference velocity corrected to the target momenta (skipped on pinned meshes).
    #[default]
    Projected,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct StepPrediction {
    pub state: SimState,
    pub v_fd: Vec<Vec3>,
    /// Set when the projection fell back to the pseudo-inverse.
    pub projection_flagged: bool,
    pub layer_positions: Vec<Vec<Vec3>>,
    pub stretch: Vec<Vec<f64>>,
    pub bend: Vec<Vec<f64>>,
}

fn finish(
    mesh: &Mesh,
    state: &SimState,
    inp: &StepInput,
    positions: Vec<Vec3>,
    mode: Option<VelocityMode>,
) -> Result<(SimState, Vec<Vec3>, bool)> {
    let dt = inp.dt;
    let v_fd: Vec<Vec3> = positions
        .iter()
        .zip(&state.positions)
        .map(|(a, b)| (a - b) / dt)
        .collect();
    let (velocities, flagged) = match mode {
        Some(VelocityMode::Projected) if !mesh.has_pins() => {
            let targets = target_momenta(mesh, state, &inp.f_ext, dt);
            let p = project_velocities(mesh.masses(), &positions, &v_fd, &targets)?;
            (p.velocities, p.used_pseudo_inverse)
        }
        _ => (v_fd.clone(), false),
    };
    let next = SimState {
        positions,
        velocities,
        time: state.time + dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite("predicted state".into()));
    }
    Ok((next, v_fd, flagged))
}

/// One MomentumGNN step: momentum step, layered impulses, finite-difference
/// velocity and (by default) momentum projection.
pub fn forward(
    model: &Model,
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    dt: f64,
    mode: VelocityMode,
) -> Result<StepPrediction> {
    let inp = StepInput::new(model, mesh, state, forces, dt)?;
    let mut g = Graph::with_params(&model.store);
    let out = build_momentum(&mut g, model, &inp)?;
    let layer_positions = out
        .positions
        .iter()
        .map(|&v| g.value(v).to_vec3s())
        .collect::<Result<Vec<_>>>()?;
    let stretch = out
        .stretch
        .iter()
        .map(|&v| g.value(v).data().to_vec())
        .collect();
    let bend = out
        .bend
        .iter()
        .map(|b| b.map(|v| g.value(v).data().to_vec()).unwrap_or_default())
        .collect();
    let positions = layer_positions.last().expect("at least x_m").clone();
    let (state_next, v_fd, projection_flagged) = finish(mesh, state, &inp, positions, Some(mode))?;
    Ok(StepPrediction {
        state: state_next,
        v_fd,
        projection_flagged,
        layer_positions,
        stretch,
        bend,
    })
}

/// One baseline step: `x + dt v + dt^2 a` with a decoded per-vertex acceleration, no projection.
pub fn baseline_forward(
    model: &Model,
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    dt: f64,
) -> Result<StepPrediction> {
    let inp = StepInput::new(model, mesh, state, forces, dt)?;
    let mut g = Graph::with_params(&model.store);
    let x = build_baseline(&mut g, model, &inp)?;
    let positions = g.value(x).to_vec3s()?;
    let (state_next, v_fd, _) = finish(mesh, state, &inp, positions.clone(), None)?;
    Ok(StepPrediction {
        state: state_next,
        v_fd,
        projection_flagged: false,
        layer_positions: vec![inp.x_m.clone(), positions],
        stretch: Vec::new(),
        bend: Vec::new(),
    })
}

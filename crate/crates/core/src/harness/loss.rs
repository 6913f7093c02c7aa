use crate::elastic::InversionPolicy;
use crate::integrator::{modified_potential, ExternalForces};
use crate::mesh::{Mesh, SimState};
use crate::momentum_gnn::{build_baseline, build_momentum, Model, StepInput, Variant};
use crate::neural::{Graph, Tensor, Var};
use crate::{Result, Vec3};

/// Modified implicit-Euler potential at `x`, with the extended inversion policy.
pub fn physics_loss_at(mesh: &Mesh, x: &[Vec3], x_m: &[Vec3], dt: f64) -> Result<(f64, Vec<Vec3>)> {
    modified_potential(mesh, x, x_m, dt, InversionPolicy::TRAINING)
}

/// Loss and parameter gradients of one sample.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub loss: f64,
    /// Loss of the bare momentum step on the same sample.
    pub momentum_step_loss: f64,
    pub gradients: Vec<Tensor>,
}

fn record(g: &mut Graph, model: &Model, inp: &StepInput) -> Result<Var> {
    match model.config.variant {
        Variant::Momentum => Ok(*build_momentum(g, model, inp)?
            .positions
            .last()
            .expect("x_m")),
        Variant::Baseline => build_baseline(g, model, inp),
    }
}

/// Network prediction and its physics loss, without gradients.
pub fn physics_loss(
    model: &Model,
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    dt: f64,
) -> Result<f64> {
    let inp = StepInput::new(model, mesh, state, forces, dt)?;
    let mut g = Graph::with_params(&model.store);
    let x = record(&mut g, model, &inp)?;
    let x = g.value(x).to_vec3s()?;
    Ok(physics_loss_at(mesh, &x, &inp.x_m, dt)?.0)
}

/// Backpropagates the physics loss through the network: the potential
/// gradient at the predicted positions seeds the reverse pass.
pub fn sample_loss(
    model: &Model,
    mesh: &Mesh,
    state: &SimState,
    forces: &ExternalForces,
    dt: f64,
) -> Result<SampleLoss> {
    let inp = StepInput::new(model, mesh, state, forces, dt)?;
    let mut g = Graph::with_params(&model.store);
    let x = record(&mut g, model, &inp)?;
    let pred = g.value(x).to_vec3s()?;
    let (loss, grad) = physics_loss_at(mesh, &pred, &inp.x_m, dt)?;
    let momentum_step_loss = physics_loss_at(mesh, &inp.x_m, &inp.x_m, dt)?.0;
    let grads = g.backward(&[(x, Tensor::from_vec3s(&grad))])?;
    Ok(SampleLoss {
        loss,
        momentum_step_loss,
        gradients: g.param_gradients(&grads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastic::MaterialParams;
    use crate::integrator::{eval_external, momentum_step, solve_direct, StepConfig};
    use crate::mesh::generate_sheet;
    use crate::momentum_gnn::ModelConfig;

    fn model() -> Model {
        let mut m = Model::seeded(
            ModelConfig {
                width: 8,
                layers: 2,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap();
        m.zero_decoders();
        m
    }

    #[test]
    fn rest_at_zero_velocity_costs_nothing() {
        let mesh = generate_sheet(4, 4, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        let l = physics_loss(
            &model(),
            &mesh,
            &mesh.rest_state(),
            &ExternalForces::none(),
            0.01,
        )
        .unwrap();
        assert!(l.abs() < 1e-20, "{l}");
    }

    #[test]
    fn minimiser_beats_momentum_step() {
        let mesh = generate_sheet(4, 4, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        let mut s = mesh.rest_state();
        for (k, x) in s.positions.iter_mut().enumerate() {
            x.z += 0.02 * (k as f64).sin();
        }
        let dt = 1.0 / 60.0;
        let forces = ExternalForces::none();
        let f = eval_external(&mesh, &s, &forces);
        let x_m = momentum_step(&mesh, &s, &f, dt);
        let (x_star, _) = solve_direct(&mesh, &s, &f, &StepConfig::for_mesh(&mesh, dt)).unwrap();
        let at_star = physics_loss_at(&mesh, &x_star, &x_m, dt).unwrap().0;
        let zero = sample_loss(&model(), &mesh, &s, &forces, dt).unwrap();
        assert!(at_star < zero.loss);
        assert_eq!(zero.loss, zero.momentum_step_loss);
    }
}

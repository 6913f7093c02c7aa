use msim_core::elastic::MaterialParams;
use msim_core::harness::{apply_noise, NoiseConfig};
use msim_core::impulse_basis::{bend_stencils, stretch_stencils};
use msim_core::integrator::ExternalForces;
use msim_core::mesh::{generate_cuboid, generate_sheet, Hinge, MeshKind};
use msim_core::momentum_gnn::{forward, Model, ModelConfig, VelocityMode};
use msim_core::velocity_projection::{project_velocities, MomentumPair};
use msim_core::Vec3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn impulse_momenta(x: &[Vec3], impulses: &[(usize, Vec3)]) -> (Vec3, Vec3) {
    impulses
        .iter()
        .fold((Vec3::zeros(), Vec3::zeros()), |(p, l), (i, dp)| {
            (p + dp, l + x[*i].cross(dp))
        })
}

proptest! {
    #[test]
    fn stretch_impulses_carry_no_momentum(x in prop::collection::vec(vec3(1.0), 2), w in -10.0..10.0f64) {
        prop_assume!((x[0] - x[1]).norm() > 1e-3);
        let s = &stretch_stencils(&x, &[[0, 1]], 1e-12).unwrap()[0];
        let (p, l) = impulse_momenta(&x, &s.apply(w));
        prop_assert!(p.norm() <= 1e-12 * w.abs().max(1.0));
        prop_assert!(l.norm() <= 1e-12 * w.abs().max(1.0));
    }

    #[test]
    fn bend_impulses_carry_no_momentum(x in prop::collection::vec(vec3(1.0), 4), w in -10.0..10.0f64) {
        let n1 = (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
        let n2 = (x[3] - x[0]).cross(&(x[1] - x[0])).norm();
        prop_assume!(n1 > 1e-2 && n2 > 1e-2);
        let hinge = Hinge { edge: 0, vertices: [0, 1, 2, 3] };
        let s = &bend_stencils(&x, &[hinge], 1e-12).unwrap()[0];
        let (p, l) = impulse_momenta(&x, &s.apply(w));
        let scale = s.apply(1.0).iter().map(|(_, d)| d.norm()).sum::<f64>() * w.abs().max(1.0);
        prop_assert!(p.norm() <= 1e-10 * scale.max(1.0));
        prop_assert!(l.norm() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn projection_hits_target_and_is_idempotent(
        body in prop::collection::vec((0.1..5.0f64, vec3(2.0), vec3(3.0)), 3..30),
        p in vec3(2.0),
        l in vec3(2.0),
    ) {
        let m: Vec<f64> = body.iter().map(|b| b.0).collect();
        let x: Vec<Vec3> = body.iter().map(|b| b.1).collect();
        let v: Vec<Vec3> = body.iter().map(|b| b.2).collect();
        let target = MomentumPair { p, l };
        let out = project_velocities(&m, &x, &v, &target).unwrap();
        prop_assume!(!out.used_pseudo_inverse);
        let got = MomentumPair::of(&m, &x, &out.velocities);
        let scale = 1.0 + target.norm() + MomentumPair::of(&m, &x, &v).norm();
        prop_assert!((got.p - p).norm() <= 1e-10 * scale);
        prop_assert!((got.l - l).norm() <= 1e-10 * scale);
        let again = project_velocities(&m, &x, &out.velocities, &target).unwrap();
        for (a, b) in again.velocities.iter().zip(&out.velocities) {
            prop_assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn noise_is_reproducible_and_spares_pins(seed in any::<u64>()) {
        let mesh = generate_sheet(4, 4, 1.0, 1.0, MaterialParams::cloth()).unwrap();
        let pinned: Vec<bool> = (0..16).map(|k| k < 4).collect();
        let mesh = mesh.with_pinned(pinned.clone()).unwrap();
        let cfg = NoiseConfig::for_kind(MeshKind::Shell);
        let state = mesh.rest_state();
        let a = apply_noise(&mesh, &state, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = apply_noise(&mesh, &state, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        for (k, pin) in pinned.iter().enumerate() {
            if *pin {
                prop_assert_eq!(a.positions[k], state.positions[k]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn untrained_step_conserves_momentum(seed in any::<u64>(), v in vec3(1.0), spin in vec3(2.0)) {
        let mesh = generate_cuboid(2, 2, 2, Vec3::new(0.3, 0.3, 0.3), MaterialParams::rubber()).unwrap();
        let mut s = mesh.rest_state();
        for (x, u) in s.positions.iter().zip(s.velocities.iter_mut()) {
            *u = v + spin.cross(x);
        }
        let model = Model::seeded(ModelConfig { kind: MeshKind::Solid, ..ModelConfig::default() }, seed).unwrap();
        let dt = 1.0 / 60.0;
        let next = forward(&model, &mesh, &s, &ExternalForces::none(), dt, VelocityMode::Projected).unwrap().state;
        let before = MomentumPair::of(mesh.masses(), &s.positions, &s.velocities);
        let after = MomentumPair::of(mesh.masses(), &next.positions, &next.velocities);
        let scale = mesh.total_mass() * mesh.diameter() / dt;
        prop_assert!((after.p - before.p).norm() <= 1e-10 * scale);
        prop_assert!((after.l - before.l).norm() <= 1e-10 * scale * mesh.diameter());
    }
}

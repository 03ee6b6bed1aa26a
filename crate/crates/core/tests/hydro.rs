use nalgebra::{DMatrix, DVector, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zodiaq_core::dynamics::{Drive, DynamicsParams, Model};
use zodiaq_core::hydro::{added_mass_contribution, rod_load_density, shell_load, BuoyancyModel, HydroParams};
use zodiaq_core::kinematics::zodiaq::{assemble_zodiaq, ZodiaqParams};
use zodiaq_core::kinematics::{jacobian, Assembly, GeneralizedState, JointKind, LinkBody, LinkSpec, RodSpec, StrainBasis};
use zodiaq_core::linalg::gauss_legendre;
use zodiaq_core::se3::{rotation_zyx, AffineStrain, Pose, Twist};

fn rod(density: f64) -> RodSpec<f64> {
    RodSpec {
        length: 0.15,
        radius: 0.005,
        youngs_modulus: 0.8e6,
        shear_modulus: 0.8e6 / 3.0,
        density,
        basis: StrainBasis::kirchhoff_affine(),
        reference_strain: AffineStrain::straight(),
        quadrature_points: 10,
        substeps: 1,
    }
}

fn tilted(roll: f64) -> Pose<f64> {
    Pose::new(rotation_zyx(roll, 0.3, -1.1), Vector3::new(0.2, -0.1, 0.4))
}

#[test]
fn neutral_section_at_rest_carries_no_load() {
    let p = HydroParams::default();
    let w = rod_load_density(&tilted(0.4), &Twist::zero(), &p, &rod(1000.0));
    assert!(w.force.norm() < 1e-15 && w.moment.norm() == 0.0);
}

#[test]
fn normal_drag_matches_closed_form() {
    let p = HydroParams::<f64>::default();
    let r = rod(1000.0);
    let v = Vector3::new(0.0, 0.3, -0.4);
    let w = rod_load_density(&Pose::identity(), &Twist::new(Vector3::zeros(), v), &p, &r);
    let expected = -v * (0.5 * 1000.0 * 1.1 * 0.01 * v.norm());
    assert!((w.force - expected).norm() < 1e-14);
}

#[test]
fn drag_and_lift_are_odd_in_velocity() {
    let mut p = HydroParams::<f64>::default();
    p.rod_cl = 0.3;
    let r = rod(1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let g = tilted(rng.random_range(-1.0..1.0));
        let f = rod_load_density(&g, &Twist::new(Vector3::zeros(), v), &p, &r).force;
        let b = rod_load_density(&g, &Twist::new(Vector3::zeros(), -v), &p, &r).force;
        assert_eq!(f, -b);
        // lift is normal to both the flow and the axis
        let mut lift_only = p.clone();
        lift_only.rod_cd_normal = 0.0;
        lift_only.rod_cd_tangent = 0.0;
        let l = rod_load_density(&g, &Twist::new(Vector3::zeros(), v), &lift_only, &r).force;
        assert!(l.x.abs() < 1e-15 && l.dot(&v).abs() < 1e-14);
    }
}

#[test]
fn level_neutral_shell_at_rest_feels_nothing() {
    let asm = assemble_zodiaq::<f64>(&ZodiaqParams { removed_modules: (1..=12).collect(), ..ZodiaqParams::default() }).unwrap();
    let body = asm.links()[0].rigid().unwrap().clone();
    let mut p = HydroParams::default();
    p.water_density = body.mass / body.volume;
    let w = shell_load(&Pose::identity(), &Twist::zero(), &body, &p);
    assert!(w.force.norm() < 1e-12);
    assert!(w.moment.norm() < 1e-12);
}

#[test]
fn ten_degree_tilt_gives_lever_arm_restoring_moment() {
    let model = Model::new(assemble_zodiaq::<f64>(&ZodiaqParams::default()).unwrap(), DynamicsParams::default());
    let mut q = DVector::zeros(model.asm.dof());
    q[0] = 10f64.to_radians();
    let e = model.evaluate(q.as_slice(), &vec![0.0; q.len()], &Drive::idle(&model.asm), 0.0).unwrap();
    let expected = 10.75 * 9.81 * 0.035 * 10f64.to_radians().sin();
    assert!((expected - 0.641).abs() < 1e-3);
    assert!((e.force[0] + expected).abs() < 1e-6, "{} vs {}", e.force[0], -expected);
}

#[test]
fn extra_buoyancy_pushes_up() {
    let asm = assemble_zodiaq::<f64>(&ZodiaqParams::default()).unwrap();
    let mut params = DynamicsParams::default();
    params.hydro.water_density = 1010.0;
    let model = Model::new(asm, params);
    let q = vec![0.0; model.asm.dof()];
    let e = model.evaluate(&q, &q, &Drive::idle(&model.asm), 0.0).unwrap();
    assert!(e.force[5] > 0.0 && e.accel[5] > 0.0);
}

#[test]
fn trimmed_build_has_no_net_vertical_force() {
    let asm = assemble_zodiaq::<f64>(&ZodiaqParams::default()).unwrap();
    let p = HydroParams::default();
    let q = vec![0.0; asm.dof()];
    let b = BuoyancyModel::of(&asm, &q, &p);
    let m = asm.total_mass();
    assert!((b.net_mass * p.gravity).abs() < 1e-6 * m * p.gravity);
    assert!((b.center_of_buoyancy_offset - Vector3::new(0.0, 0.0, 0.035)).norm() < 1e-9);
    let model = Model::new(asm, DynamicsParams::default());
    let e = model.evaluate(&q, &q, &Drive::idle(&model.asm), 0.0).unwrap();
    assert!(e.force[5].abs() < 1e-6 * m * p.gravity);
}

#[test]
fn added_mass_vanishes_without_fluid_inertia() {
    let asm = assemble_zodiaq::<f64>(&ZodiaqParams::default()).unwrap();
    let mut p = HydroParams::default();
    p.rod_ca = 0.0;
    p.shell_added_mass = Matrix6::zeros();
    let s = GeneralizedState::zeros(asm.dof());
    assert_eq!(added_mass_contribution(&asm, &s, &p).amax(), 0.0);
}

#[test]
fn straight_rod_added_mass_matches_dense_quadrature() {
    let r = rod(1100.0);
    let asm =
        Assembly::new(vec![LinkSpec { name: "rod".into(), parent: None, joint: JointKind::Fixed, attach: Pose::identity(), body: LinkBody::Soft(r.clone()) }])
            .unwrap();
    let p = HydroParams::default();
    let s = GeneralizedState::zeros(6);
    let m = added_mass_contribution(&asm, &s, &p);
    let ma = p.rod_added_mass(&r);
    let (nodes, weights) = gauss_legendre(48);
    let mut dense = DMatrix::zeros(6, 6);
    for (x, w) in nodes.iter().zip(&weights) {
        let xs = 0.5 * r.length * (x + 1.0);
        let (j, _) = jacobian(&asm, &s, 0, xs).unwrap();
        dense += j.transpose() * ma * &j * (0.5 * r.length * w);
    }
    assert!((&m - &dense).amax() < 1e-8 * dense.amax().max(1e-12), "{}", (&m - &dense).amax());
    assert!(m.amax() > 0.0);
}

#[test]
fn added_mass_is_symmetric_positive_semidefinite() {
    let asm = assemble_zodiaq::<f64>(&ZodiaqParams::default()).unwrap();
    let p = HydroParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let q = DVector::from_fn(asm.dof(), |_, _| rng.random_range(-1.5..1.5));
        let s = GeneralizedState { q, qdot: DVector::zeros(asm.dof()) };
        let m = added_mass_contribution(&asm, &s, &p);
        assert!((&m - m.transpose()).amax() < 1e-12 * m.amax());
        let min = m.symmetric_eigenvalues().min();
        assert!(min > -1e-10 * m.amax(), "{min}");
    }
}

#[test]
fn distributed_drag_converges_with_quadrature_order() {
    let force = |points: usize| {
        let params = ZodiaqParams { quadrature_points: points, ..ZodiaqParams::default() };
        let model = Model::new(assemble_zodiaq::<f64>(&params).unwrap(), DynamicsParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = DVector::from_fn(model.asm.dof(), |_, _| rng.random_range(-0.5..0.5));
        let v = DVector::from_fn(model.asm.dof(), |_, _| rng.random_range(-0.5..0.5));
        model.evaluate(q.as_slice(), v.as_slice(), &Drive::idle(&model.asm), 0.0).unwrap().force.rows(0, 6).into_owned()
    };
    let (f5, f10, f20) = (force(5), force(10), force(20));
    assert!((&f10 - &f20).norm() < 0.5 * (&f5 - &f20).norm());
    assert!((&f10 - &f20).norm() < 1e-3 * f20.norm());
}

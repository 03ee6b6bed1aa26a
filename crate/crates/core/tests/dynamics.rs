use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zodiaq_core::dynamics::{simulate, Drive, DynamicsParams, IntegratorConfig, Model, MotorProgram, OpenLoop, SimulationConfig, RPM};
use zodiaq_core::hydro::HydroParams;
use zodiaq_core::kinematics::zodiaq::{assemble_zodiaq, ZodiaqParams};
use zodiaq_core::kinematics::{forward_kinematics, jacobian, strain_at, Assembly, GeneralizedState, JointKind, LinkBody, LinkSpec, RodSpec, StrainBasis};
use zodiaq_core::linalg::{gauss_legendre, Cholesky};
use zodiaq_core::se3::{AffineStrain, Pose, Wrench};

fn cantilever() -> Assembly<f64> {
    Assembly::new(vec![LinkSpec {
        name: "rod".into(),
        parent: None,
        joint: JointKind::Fixed,
        attach: Pose::identity(),
        body: LinkBody::Soft(RodSpec {
            length: 0.15,
            radius: 0.005,
            youngs_modulus: 1e6,
            shear_modulus: 1e6 / 3.0,
            density: 1000.0,
            basis: StrainBasis::kirchhoff_affine(),
            reference_strain: AffineStrain::straight(),
            quadrature_points: 10,
            substeps: 1,
        }),
    }])
    .unwrap()
}

fn vacuum(damping: f64) -> DynamicsParams<f64> {
    DynamicsParams { hydro: HydroParams::vacuum(0.0), damping_time: damping }
}

fn zodiaq_model(params: ZodiaqParams, dynamics: DynamicsParams<f64>) -> Model<f64> {
    Model::new(assemble_zodiaq(&params).unwrap(), dynamics)
}

fn idle() -> MotorProgram {
    MotorProgram::new(0.05, 130.0 * RPM)
}

fn random_state(asm: &Assembly<f64>, rng: &mut ChaCha8Rng, speed: f64) -> GeneralizedState<f64> {
    let n = asm.dof();
    let mut q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    for k in 0..3 {
        q[k] = rng.random_range(-0.5..0.5);
    }
    let mut qdot = DVector::from_fn(n, |_, _| speed * rng.random_range(-1.0..1.0));
    for &p in asm.prescribed() {
        qdot[p] = 0.0;
    }
    GeneralizedState { q, qdot }
}

#[test]
fn neutral_build_at_rest_does_not_accelerate() {
    let mut p = ZodiaqParams::default();
    p.flagellum.density = 1000.0;
    let model = zodiaq_model(p, DynamicsParams::default());
    let s = GeneralizedState::zeros(model.asm.dof());
    let a = model.generalized_accel(&s, &idle(), 0.0).unwrap();
    assert!(a.amax() < 1e-9, "{}", a.amax());
}

#[test]
fn cantilever_tip_deflection_matches_beam_theory() {
    let model = Model::new(cantilever(), vacuum(0.0));
    let rod = model.asm.links()[0].rod().unwrap().clone();
    let (l, ei) = (rod.length, rod.youngs_modulus * rod.second_moment());
    let force = 1e-3;
    let expected = force * l.powi(3) / (3.0 * ei);
    assert!(expected < 0.02 * l);
    let accel = |q: &DVector<f64>| {
        let s = GeneralizedState { q: q.clone(), qdot: DVector::zeros(6) };
        let (g, _) = forward_kinematics(&model.asm, &s, 0, l).unwrap();
        let (j, _) = jacobian(&model.asm, &s, 0, l).unwrap();
        let body = Wrench::new(Vector3::zeros(), g.rotation.transpose() * Vector3::new(0.0, 0.0, force));
        let drive = Drive { generalized_force: Some(j.transpose() * body.to_vector()), ..Drive::idle(&model.asm) };
        model.evaluate(q.as_slice(), &[0.0; 6], &drive, 0.0).unwrap().accel
    };
    let mut q = DVector::zeros(6);
    for _ in 0..20 {
        let a = accel(&q);
        if a.amax() < 1e-12 {
            break;
        }
        let mut jac = DMatrix::zeros(6, 6);
        for k in 0..6 {
            let mut qp = q.clone();
            qp[k] += 1e-6;
            jac.set_column(k, &((accel(&qp) - &a) / 1e-6));
        }
        q -= jac.lu().solve(&a).unwrap();
    }
    let s = GeneralizedState { q, qdot: DVector::zeros(6) };
    let tip = forward_kinematics(&model.asm, &s, 0, l).unwrap().0.position;
    assert!((tip.z - expected).abs() < 0.01 * expected, "{} vs {}", tip.z, expected);
}

#[test]
fn free_rod_oscillation_conserves_energy() {
    let model = Model::new(cantilever(), vacuum(0.0));
    let mut s = GeneralizedState::zeros(6);
    s.q[2] = 0.4;
    s.q[3] = -0.3;
    s.q[0] = 0.2;
    let e0 = model.energy(&s).total();
    let motors = idle();
    let dt = 1e-4;
    let mut worst: f64 = 0.0;
    for n in 0..10_000 {
        model.step_rk4(&mut s, n as f64 * dt, dt, &motors, &Wrench::zero()).unwrap();
        worst = worst.max((model.energy(&s).total() - e0).abs() / e0);
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn energy_of_rigid_shell_is_translational() {
    let p = ZodiaqParams { removed_modules: (1..=12).collect(), ..ZodiaqParams::default() };
    let model = zodiaq_model(p, DynamicsParams { hydro: HydroParams::vacuum(9.81), damping_time: 0.05 });
    let mut s = GeneralizedState::zeros(model.asm.dof());
    assert_eq!(model.energy(&s).total(), model.energy(&s).gravitational);
    s.qdot[3] = 0.3;
    s.qdot[4] = -0.2;
    s.qdot[5] = 0.1;
    let m = model.asm.total_mass();
    let e = model.energy(&s);
    assert!((e.kinetic - 0.5 * m * 0.14).abs() < 1e-12);
    assert_eq!(e.elastic, 0.0);
}

#[test]
fn energy_matches_independent_quadrature() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let asm = &model.asm;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_state(asm, &mut rng, 1.0);
    let e = model.energy(&s);

    let m = model.mass_matrix(s.q.as_slice());
    let kinetic = 0.5 * s.qdot.dot(&(&m * &s.qdot));
    assert!((e.kinetic - kinetic).abs() < 1e-8 * kinetic.max(1.0), "{} vs {}", e.kinetic, kinetic);

    let (nodes, weights) = gauss_legendre(32);
    let mut elastic = 0.0;
    for l in 0..asm.link_count() {
        let Some(rod) = asm.links()[l].rod() else { continue };
        let sigma = rod.section_stiffness();
        for (x, w) in nodes.iter().zip(&weights) {
            let xs = 0.5 * rod.length * (x + 1.0);
            let xi = strain_at(asm, s.q.as_slice(), l, xs).unwrap();
            let dx = xi - rod.reference_strain.at(xs);
            elastic += 0.5 * rod.length * w * 0.5 * dx.dot(&sigma.component_mul(&dx));
        }
    }
    assert!((e.elastic - elastic).abs() < 1e-8 * elastic.max(1.0), "{} vs {}", e.elastic, elastic);

    let hydro = &model.params.hydro;
    let mut potential = 0.0;
    for l in 0..asm.link_count() {
        match &asm.links()[l].body {
            LinkBody::Rigid(b) => {
                let (g, _) = forward_kinematics(asm, &s, l, 0.0).unwrap();
                potential += hydro.gravity * (b.mass * g.transform_point(&b.com).z - hydro.water_density * b.volume * g.transform_point(&b.buoyancy_center).z);
            }
            LinkBody::Soft(r) => {
                for p in &asm.plan(l).unwrap().points {
                    let (g, _) = forward_kinematics(asm, &s, l, p.x).unwrap();
                    potential += hydro.gravity * (r.density - hydro.water_density) * r.area() * p.weight * g.position.z;
                }
            }
        }
    }
    assert!((e.gravitational - potential).abs() < 1e-8 * potential.abs().max(1.0));
}

#[test]
fn mass_matrix_is_symmetric_positive_definite() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let s = random_state(&model.asm, &mut rng, 0.0);
        let m = model.mass_matrix(s.q.as_slice());
        assert!((&m - m.transpose()).amax() < 1e-12 * m.amax());
        let c = Cholesky::new(&m).unwrap();
        assert!(c.min_pivot() > 0.0);
    }
}

#[test]
fn free_floating_momentum_is_conserved_in_vacuum() {
    let p = ZodiaqParams { removed_modules: (3..=12).collect(), ..ZodiaqParams::default() };
    let model = zodiaq_model(p, vacuum(0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = random_state(&model.asm, &mut rng, 0.5);
    s.q.iter_mut().skip(6).for_each(|q| *q *= 0.2);
    let p0 = model.linear_momentum(&s);
    let motors = idle();
    let dt = 5e-4;
    for n in 0..10_000 {
        model.step_rk4(&mut s, n as f64 * dt, dt, &motors, &Wrench::zero()).unwrap();
    }
    let p1 = model.linear_momentum(&s);
    assert!((p1 - p0).norm() < 1e-6 * p0.norm(), "{} vs {}", p1, p0);
}

#[test]
fn equilibrium_is_held_without_actuation() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let eq = model.equilibrium(&GeneralizedState::zeros(model.asm.dof()), 1e-11).unwrap();
    let cfg = SimulationConfig { integrator: IntegratorConfig::implicit(2e-3), t_end: 10.0, log_rate: 10.0, log_coordinates: true };
    let sim = simulate(&model, eq.clone(), idle(), &mut OpenLoop, &cfg).unwrap();
    assert!((&sim.state.q - &eq.q).amax() < 1e-9);
    assert!(sim.state.qdot.amax() < 1e-9);
}

fn peaks(x: &[f64]) -> Vec<f64> {
    x.windows(3).filter(|w| w[1].abs() > w[0].abs() && w[1].abs() >= w[2].abs()).map(|w| w[1].abs()).collect()
}

#[test]
fn tilt_and_push_decays_passively() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let eq = model.equilibrium(&GeneralizedState::zeros(model.asm.dof()), 1e-10).unwrap();
    let mut s = eq.clone();
    s.q[0] += 15f64.to_radians();
    s.q[5] -= 0.2;
    let cfg = SimulationConfig { integrator: IntegratorConfig::implicit(2e-3), t_end: 8.0, log_rate: 50.0, log_coordinates: true };
    let sim = simulate(&model, s, idle(), &mut OpenLoop, &cfg).unwrap();
    let roll = sim.log.column("roll").unwrap();
    let p = peaks(&roll);
    assert!(p.len() >= 3);
    assert!(p.windows(2).all(|w| w[1] < w[0]), "{p:?}");
    assert!(roll.last().unwrap().abs() < 0.25 * 15f64.to_radians());
    let z = sim.log.column("z").unwrap();
    assert!(z.iter().all(|z| (z + 0.2).abs() < 0.05), "depth wandered");
}

fn openloop_endpoint(dt: f64) -> Vector3<f64> {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let mut motors = idle();
    for m in [6, 8, 9, 11] {
        motors.command(m, 0.0, 60.0 * RPM).unwrap();
    }
    let cfg = SimulationConfig { integrator: IntegratorConfig::implicit(dt), t_end: 10.0, log_rate: 10.0, log_coordinates: true };
    let sim = simulate(&model, GeneralizedState::zeros(model.asm.dof()), motors, &mut OpenLoop, &cfg).unwrap();
    Vector3::new(sim.state.q[3], sim.state.q[4], sim.state.q[5])
}

#[test]
fn halving_the_step_barely_moves_the_endpoint() {
    let coarse = openloop_endpoint(2e-3);
    let fine = openloop_endpoint(1e-3);
    assert!((coarse - fine).norm() < 0.01 * fine.norm(), "{coarse} vs {fine}");
}

#[test]
fn identical_runs_give_identical_logs() {
    let run = || {
        let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
        let mut motors = idle();
        motors.command(3, 0.0, 40.0 * RPM).unwrap();
        let cfg = SimulationConfig { integrator: IntegratorConfig::implicit(2e-3), t_end: 0.5, log_rate: 50.0, log_coordinates: true };
        let sim = simulate(&model, GeneralizedState::zeros(model.asm.dof()), motors, &mut OpenLoop, &cfg).unwrap();
        let mut out = Vec::new();
        sim.log.write_csv(&mut out).unwrap();
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn drag_only_motion_loses_energy() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = random_state(&model.asm, &mut rng, 0.3);
    s.q.iter_mut().enumerate().for_each(|(k, q)| *q *= if k < 6 { 0.2 } else { 0.1 });
    let motors = idle();
    let cfg = IntegratorConfig::implicit(2e-3);
    let mut e = model.energy(&s).total();
    for n in 0..250 {
        model.step(&mut s, n as f64 * cfg.dt, &cfg, &motors, &Wrench::zero()).unwrap();
        let e1 = model.energy(&s).total();
        assert!(e1 <= e + 1e-9, "step {n}: {e1} > {e}");
        e = e1;
    }
}

#[test]
fn motor_reaction_opposes_drag_when_spinning() {
    let model = zodiaq_model(ZodiaqParams::default(), DynamicsParams::default());
    let mut motors = idle();
    motors.command(1, 0.0, 60.0 * RPM).unwrap();
    let cfg = SimulationConfig { integrator: IntegratorConfig::implicit(2e-3), t_end: 2.0, log_rate: 10.0, log_coordinates: true };
    let sim = simulate(&model, GeneralizedState::zeros(model.asm.dof()), motors, &mut OpenLoop, &cfg).unwrap();
    let tau = sim.log.last("tau1").unwrap();
    assert!(tau > 0.0, "{tau}");
    assert_eq!(sim.log.last("w1").unwrap(), 60.0 * RPM);
}

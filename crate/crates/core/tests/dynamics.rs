use amech::dynamics::{cartan, euler_lagrange_rhs, is_regular, legendre, legendre_inverse, sode_defect, EPoint, LagrangianSystem};
use amech::flows;
use amech::odeint::{integrate, IntegratorConfig, OdeProblem};
use amech::presets::{self, vakonomic_labels};
use amech::presym::{run_constraint_algorithm, ConstraintConfig, PresymplecticProblem};
use amech::vakonomic::VakonomicSystem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn system(id: &str) -> (presets::Preset, LagrangianSystem) {
    let p = presets::load(id).unwrap();
    let sys = LagrangianSystem::new(&p.spec).unwrap();
    (p, sys)
}

#[test]
fn rigid_body_equations_are_eulers() {
    let (p, sys) = system("so3_rigid_body");
    let i = [p.spec.params["I1"], p.spec.params["I2"], p.spec.params["I3"]];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labels = flows::tangent_labels(&p.spec);
    for _ in 0..50 {
        let w = p.sample(&labels, &mut rng);
        let (_, wdot) = euler_lagrange_rhs(&sys, &EPoint::new(vec![], w.clone())).unwrap();
        let expect = [(i[1] - i[2]) * w[1] * w[2] / i[0], (i[2] - i[0]) * w[2] * w[0] / i[1], (i[0] - i[1]) * w[0] * w[1] / i[2]];
        for k in 0..3 {
            assert!((wdot[k] - expect[k]).abs() < 1e-13, "{k}: {} vs {}", wdot[k], expect[k]);
        }
    }
}

#[test]
fn pendulum_cartan_data() {
    let (_, sys) = system("tq_pendulum");
    for (q, e) in [(0.3, -0.7), (2.0, 1.5), (-1.1, 0.0)] {
        let at = EPoint::new(vec![q], vec![e]);
        let c = cartan(&sys, &at).unwrap();
        assert!((c.energy - (0.5 * e * e + 1.0 - f64::cos(q))).abs() < 1e-15);
        assert!((c.d_energy[0] - f64::sin(q)).abs() < 1e-15);
        assert!((c.d_energy[1] - e).abs() < 1e-15);
        assert_eq!(c.omega, -c.omega.transpose());
        let (qd, ed) = euler_lagrange_rhs(&sys, &at).unwrap();
        assert_eq!(qd, vec![e]);
        assert!((ed[0] + f64::sin(q)).abs() < 1e-15);
    }
}

#[test]
fn capri_lagrangian_is_singular_with_the_expected_energy() {
    let (p, sys) = system("capri_kobayashi");
    let m2 = p.spec.params["m2"];
    let labels = flows::tangent_labels(&p.spec);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let z = p.sample(&labels, &mut rng);
        let at = EPoint::new(z[..3].to_vec(), z[3..].to_vec());
        assert!(!is_regular(&sys, &at).unwrap().regular);
        assert!(euler_lagrange_rhs(&sys, &at).is_err());
        let (x1, y1, rho, e3, e0) = (z[0], z[1], z[2], z[5], z[6]);
        let expect = 0.5 * m2 * (e3 * e3 + (rho * e0).powi(2)) + x1 * x1 + y1 * y1 + rho * rho;
        assert!((cartan(&sys, &at).unwrap().energy - expect).abs() < 1e-13);
    }
}

#[test]
fn legendre_map_inverts() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for id in ["tq_pendulum", "so3_rigid_body", "skinner_rusk_demo"] {
        let (p, sys) = system(id);
        let labels = flows::tangent_labels(&p.spec);
        for _ in 0..20 {
            let z = p.sample(&labels, &mut rng);
            let m = sys.m();
            let at = EPoint::new(z[..m].to_vec(), z[m..].to_vec());
            let d = legendre(&sys, &at).unwrap();
            let y = legendre_inverse(&sys, &d.x, &d.p, &vec![0.0; sys.n()]).unwrap();
            for (a, b) in y.iter().zip(&at.y) {
                assert!((a - b).abs() < 1e-10, "{id}");
            }
        }
    }
}

fn agreement(problem: &OdeProblem<'_>, y0: &[f64], rtol: f64) -> f64 {
    let a = integrate(problem, &IntegratorConfig::rk4(0.0, 10.0, 1e-3), y0, &[]).unwrap();
    let b = integrate(problem, &IntegratorConfig::dp45(0.0, 10.0, rtol, 1e-3 * rtol), y0, &[]).unwrap();
    assert_eq!(a.times.last(), b.times.last());
    a.last().iter().zip(b.last()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs() / v.abs().max(1.0)))
}

#[test]
fn adaptive_and_fixed_step_integrators_agree_on_every_preset() {
    let rtol = 1e-9;
    for p in presets::all() {
        let sys = LagrangianSystem::new(&p.spec).unwrap();
        let start = |labels: &[String]| -> Vec<f64> { labels.iter().map(|l| p.facts.init.get(l).copied().unwrap_or(0.0)).collect() };
        let err = if p.spec.vakonomic.is_some() {
            let vak = VakonomicSystem::new(&p.spec).unwrap();
            let problem = flows::vakonomic(&vak, &p.spec);
            agreement(&problem, &start(&vakonomic_labels(&p.spec)), rtol)
        } else if p.facts.regular {
            let labels = flows::tangent_labels(&p.spec);
            agreement(&flows::euler_lagrange(&sys, labels.clone()), &start(&labels), rtol)
        } else {
            let labels = flows::tangent_labels(&p.spec);
            agreement(&flows::sode(&sys, labels.clone()), &start(&labels), rtol)
        };
        assert!(err < 10.0 * rtol, "{}: {err:e}", p.id);
    }
}

#[test]
fn sode_defect_is_the_componentwise_gap() {
    let at = EPoint::new(vec![0.0], vec![1.0, -2.0, 0.5]);
    assert_eq!(sode_defect(&[1.0, -2.0, 0.5], &at), vec![0.0, 0.0, 0.0]);
    assert_eq!(sode_defect(&[1.5, -2.0, 0.0], &at), vec![0.5, 0.0, -0.5]);
}

#[test]
fn regular_problems_stop_at_the_first_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for id in ["tq_pendulum", "so3_rigid_body", "lie_algebra_affine"] {
        let (p, sys) = system(id);
        let labels = flows::tangent_labels(&p.spec);
        let seeds: Vec<Vec<f64>> = (0..10).map(|_| p.sample(&labels, &mut rng)).collect();
        let run = run_constraint_algorithm(&PresymplecticProblem::lagrangian(&sys, labels), &seeds, ConstraintConfig::default()).unwrap();
        assert_eq!(run.final_level(), 0, "{id}");
        for z in &seeds {
            assert_eq!(run.constraints(z).unwrap().len(), 0);
            let sol = run.solve_on_final(z).unwrap();
            assert!(sode_defect(&sol.x[..sys.n()], &EPoint::new(z[..sys.m()].to_vec(), z[sys.m()..].to_vec())).iter().all(|d| d.abs() < 1e-9), "{id}");
        }
    }
}

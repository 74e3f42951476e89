use amech::algebroid::{hamilton_rhs, DualPoint, ExprObservable, Observable};
use amech::dynamics::{legendre_inverse, LagrangianSystem, LegendreHamiltonian};
use amech::expr::{eval, parse_expr, Bindings};
use amech::flows;
use amech::odeint::{integrate, monitor_drift, IntegratorConfig, Monitor};
use amech::presets::{self, vakonomic_labels, Preset};
use amech::vakonomic::{VakState, VakonomicSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_state(p: &Preset, sys: &VakonomicSystem, rng: &mut ChaCha8Rng) -> VakState {
    sys.split(&p.sample(&vakonomic_labels(&p.spec), rng))
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

#[test]
fn plate_ball_matches_reference_formulas() {
    let p = presets::load("plate_ball").unwrap();
    let sys = VakonomicSystem::new(&p.spec).unwrap();
    let facts = &p.facts;
    let h_ref = parse_expr(facts.h_w1.as_deref().unwrap()).unwrap();
    let dep = &facts.dependent_momenta;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let s = random_state(&p, &sys, &mut rng);
        let mut b: Bindings = p.spec.params.clone();
        for (k, name) in ["x1", "x2"].iter().enumerate() {
            b.insert(name.to_string(), s.x[k]);
        }
        for (k, name) in ["e1", "e2"].iter().enumerate() {
            b.insert(name.to_string(), s.ya[k]);
        }
        for (k, name) in ["p3", "p4", "p5"].iter().enumerate() {
            b.insert(name.to_string(), s.palpha[k]);
        }
        let pa = sys.dependent_momenta(&s).unwrap();
        for (k, name) in ["p1", "p2"].iter().enumerate() {
            let expect = eval(&parse_expr(&dep[*name]).unwrap(), &b).unwrap();
            assert!((pa[k] - expect).abs() < 1e-14, "{name}");
            b.insert(name.to_string(), pa[k]);
        }
        let full = sys.full_momenta(&s).unwrap();
        let h = sys.w1_observable(s.ya.clone()).value(&s.x, &full).unwrap();
        assert!((h - eval(&h_ref, &b).unwrap()).abs() < 1e-12);
        let reg = sys.regularity_matrix(&s).unwrap();
        assert!(reg.regular);
        assert_eq!(reg.r, nalgebra::DMatrix::identity(2, 2));
    }
}

/// The section of `W_1` and the explicit vakonomic equations describe the
/// same motion once the dependent momenta are differentiated along it.
#[test]
fn hamiltonian_section_agrees_with_the_vakonomic_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for id in ["plate_ball", "martinet", "lie_algebra_affine"] {
        let p = presets::load(id).unwrap();
        let sys = VakonomicSystem::new(&p.spec).unwrap();
        for _ in 0..20 {
            let s = random_state(&p, &sys, &mut rng);
            let flat = s.flat();
            let rhs = sys.vakonomic_rhs(&s).unwrap();
            let full = sys.full_momenta(&s).unwrap();
            let sec = sys.hamiltonian_section(&s.x, &full, &s.ya).unwrap();
            assert!(sup(sec.mu.iter().zip(&s.ya).map(|(a, b)| a - b)) < 1e-10, "{id}: mu");
            assert!(sup(sec.xdot.iter().zip(&rhs).map(|(a, b)| a - b)) < 1e-12, "{id}: xdot");
            // d/dt p along the flow by a centered difference in the flow direction.
            let h = 1e-5;
            let shift = |sign: f64| {
                let z: Vec<f64> = flat.iter().zip(&rhs).map(|(a, d)| a + sign * h * d).collect();
                sys.full_momenta(&sys.split(&z)).unwrap()
            };
            let (fp, fm) = (shift(1.0), shift(-1.0));
            for a in 0..sys.n() {
                let dp = (fp[a] - fm[a]) / (2.0 * h);
                assert!((dp - sec.pdot[a]).abs() < 1e-7 * (1.0 + dp.abs()), "{id}: pdot[{a}] {dp} vs {}", sec.pdot[a]);
            }
        }
    }
}

/// Without constraints the section is the Legendre-transformed Hamiltonian
/// vector field.
#[test]
fn unconstrained_section_is_the_legendre_hamiltonian_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for id in ["so3_rigid_body", "skinner_rusk_demo", "tq_pendulum"] {
        let p = presets::load(id).unwrap();
        let sys = VakonomicSystem::new(&p.spec).unwrap();
        assert!(sys.constrained().is_empty());
        let lag = LagrangianSystem::new(&p.spec).unwrap();
        let leg = LegendreHamiltonian::new(lag.clone());
        let dual = flows::dual_labels(&p.spec);
        for _ in 0..20 {
            let z = p.sample(&dual, &mut rng);
            let (x, q) = z.split_at(sys.m());
            let sec = sys.hamiltonian_section(x, q, &vec![0.0; sys.n()]).unwrap();
            let y = legendre_inverse(&lag, x, q, &vec![0.0; sys.n()]).unwrap();
            assert!(sup(sec.y.iter().zip(&y).map(|(a, b)| a - b)) < 1e-10, "{id}: velocity");
            let (xd, pd) = hamilton_rhs(sys.chart(), &leg, &DualPoint::new(x.to_vec(), q.to_vec())).unwrap();
            assert!(sup(sec.xdot.iter().zip(&xd).map(|(a, b)| a - b)) < 1e-10, "{id}: xdot");
            assert!(sup(sec.pdot.iter().zip(&pd).map(|(a, b)| a - b)) < 1e-10, "{id}: pdot");
        }
    }
}

/// Integrating the Hamiltonian flow of `H_W1` reproduces the vakonomic
/// trajectory, and `H_W1` is conserved along it.
#[test]
fn plate_ball_flows_coincide_and_conserve_h_w1() {
    let p = presets::load("plate_ball").unwrap();
    let sys = VakonomicSystem::new(&p.spec).unwrap();
    let labels = vakonomic_labels(&p.spec);
    let y0: Vec<f64> = labels.iter().map(|l| p.facts.init.get(l).copied().unwrap_or(0.0)).collect();
    let s0 = sys.split(&y0);
    let cfg = IntegratorConfig::rk4(0.0, 5.0, 1e-3);

    let w1 = sys.w1_observable(s0.ya.clone());
    let m = sys.m();
    let mon = [Monitor::new("H", |_, z: &[f64]| {
        let s = sys.split(z);
        let full = sys.full_momenta(&s)?;
        Ok(sys.pontryagin_h(&s.x, &full, &s.ya)?)
    })];
    let vak = integrate(&flows::vakonomic(&sys, &p.spec), &cfg, &y0, &mon).unwrap();
    let drift = monitor_drift(&vak, "H").unwrap().max_abs_deviation;
    assert!(drift < 1e-9, "H_W1 drift {drift:e}");

    let z0: Vec<f64> = s0.x.iter().copied().chain(sys.full_momenta(&s0).unwrap()).collect();
    let ham = integrate(&flows::hamilton(sys.chart(), &w1, flows::dual_labels(&p.spec)), &cfg, &z0, &[]).unwrap();
    let mut err = 0.0f64;
    for (a, b) in vak.states.iter().zip(&ham.states) {
        let s = sys.split(a);
        let full = sys.full_momenta(&s).unwrap();
        err = err.max(sup(s.x.iter().chain(&full).zip(b).map(|(u, v)| u - v)));
        let phi = sys.w1_constraints(&b[..m], &b[m..], &s.ya).unwrap();
        err = err.max(sup(phi));
    }
    assert!(err < 1e-7, "vakonomic vs H_W1 flow {err:e}");
}

#[test]
fn cost_function_matches_the_lagrangian() {
    let p = presets::load("martinet").unwrap();
    let cost = ExprObservable::parse(p.facts.cost.as_deref().unwrap(), &p.spec);
    assert!(cost.is_err(), "the cost depends on velocities, not momenta");
    let lag = LagrangianSystem::new(&p.spec).unwrap();
    let e = parse_expr(p.facts.cost.as_deref().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let labels = flows::tangent_labels(&p.spec);
    for _ in 0..20 {
        let z = p.sample(&labels, &mut rng);
        let mut b = p.spec.params.clone();
        b.extend(labels.iter().cloned().zip(z.iter().copied()));
        let at = amech::dynamics::EPoint::new(z[..1].to_vec(), z[1..].to_vec());
        assert!((lag.value(&at).unwrap() - eval(&e, &b).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn h_w1_is_conserved_on_every_vakonomic_preset() {
    for p in presets::all().into_iter().filter(|p| p.spec.vakonomic.is_some()) {
        let sys = VakonomicSystem::new(&p.spec).unwrap();
        let labels = vakonomic_labels(&p.spec);
        let y0: Vec<f64> = labels.iter().map(|l| p.facts.init.get(l).copied().unwrap_or(0.0)).collect();
        let mon = [Monitor::new("H", |_, z: &[f64]| {
            let s = sys.split(z);
            let full = sys.full_momenta(&s)?;
            Ok(sys.pontryagin_h(&s.x, &full, &s.ya)?)
        })];
        let traj = integrate(&flows::vakonomic(&sys, &p.spec), &IntegratorConfig::rk4(0.0, 10.0, 1e-3), &y0, &mon).unwrap();
        let drift = monitor_drift(&traj, "H").unwrap().max_abs_deviation;
        assert!(drift < 1e-6, "{}: {drift:e}", p.id);
    }
}

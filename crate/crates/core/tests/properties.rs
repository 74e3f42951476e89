use std::sync::Arc;

use amech::algebroid::{bracket_observable, lie_poisson_bracket, AlgebroidChart, DualPoint, ExprObservable, Observable};
use amech::expr::{eval, grad, hessian, parse_expr, BinOp, Bindings, Expr, Func};
use amech::linalg;
use amech::presets;
use amech::presym::{kernel, perp};
use nalgebra::DMatrix;
use proptest::prelude::*;

const VARS: [&str; 3] = ["u", "v", "w"];

/// Expressions that are smooth everywhere.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(-12i32..12).prop_map(|k| Expr::Const(k as f64 * 0.25)), (0usize..3).prop_map(|i| Expr::var(VARS[i])),];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (inner.clone(), prop_oneof![Just(Func::Sin), Just(Func::Cos)]).prop_map(|(e, f)| Expr::Func(f, Box::new(e))),
            inner.clone().prop_map(|e| Expr::Func(Func::Exp, Box::new(Expr::Func(Func::Sin, Box::new(e))))),
            (inner.clone(), 0i32..4).prop_map(|(e, k)| Expr::Pow(Box::new(e), k)),
            (inner.clone(), inner.clone(), prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)]).prop_map(|(a, b, op)| Expr::bin(op, a, b)),
            // a / (2 + sin b) keeps the denominator away from zero.
            (inner.clone(), inner).prop_map(|(a, b)| Expr::bin(BinOp::Div, a, Expr::bin(BinOp::Add, Expr::Const(2.0), Expr::Func(Func::Sin, Box::new(b))))),
        ]
    })
}

fn bindings(z: &[f64]) -> Bindings {
    VARS.iter().map(|v| v.to_string()).zip(z.iter().copied()).collect()
}

fn names() -> Vec<String> {
    VARS.iter().map(|v| v.to_string()).collect()
}

fn skew(n: usize, entries: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = entries[k];
            m[(j, i)] = -entries[k];
            k += 1;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printing_then_parsing_gives_the_same_tree(e in smooth_expr()) {
        let back = parse_expr(&e.to_string()).unwrap();
        prop_assert_eq!(&back, &e);
    }

    #[test]
    fn gradient_agrees_with_central_differences(e in smooth_expr(), z in prop::array::uniform3(-1.5f64..1.5)) {
        let g = grad(&e, &names(), &bindings(&z)).unwrap();
        for k in 0..3 {
            let h = 1e-6 * z[k].abs().max(1.0);
            let (mut zp, mut zm) = (z, z);
            zp[k] += h;
            zm[k] -= h;
            let fd = (eval(&e, &bindings(&zp)).unwrap() - eval(&e, &bindings(&zm)).unwrap()) / (2.0 * h);
            let scale = fd.abs().max(1.0) * (1.0 + eval(&e, &bindings(&z)).unwrap().abs());
            prop_assert!((g[k] - fd).abs() / scale < 1e-6, "k = {}: ad {} fd {}", k, g[k], fd);
        }
    }

    #[test]
    fn hessian_is_exactly_symmetric(e in smooth_expr(), z in prop::array::uniform3(-1.5f64..1.5)) {
        let h = hessian(&e, &names(), &bindings(&z)).unwrap();
        prop_assert_eq!(h.clone(), h.transpose());
    }

    /// `dim F^⊥ = dim E − dim F + dim(F ∩ ker Ω)`, with the intersection
    /// counted through `dim F + dim ker − dim(F + ker)`.
    #[test]
    fn perp_dimension_formula(
        n in 2usize..7,
        entries in prop::collection::vec(-1.0f64..1.0, 21),
        degenerate in 0usize..3,
        fcols in prop::collection::vec(-1.0f64..1.0, 42),
        k in 0usize..5,
    ) {
        let mut omega = skew(n, &entries);
        // Make Ω degenerate by projecting out some directions.
        if degenerate > 0 && n > degenerate {
            let q = DMatrix::from_fn(n, degenerate, |i, j| entries[(i * 3 + j) % 21] + if i == j { 2.0 } else { 0.0 });
            let p = DMatrix::identity(n, n) - linalg::projector(&linalg::range_basis(&q, 1e-12));
            omega = &p * omega * &p;
        }
        let k = k.min(n);
        let f = DMatrix::from_fn(n, k, |i, j| fcols[i * 6 + j]);
        prop_assume!(linalg::rank(&f, 1e-9) == k);
        let tol = linalg::rank_tol();
        let ker = kernel(&omega);
        let dim_sum = linalg::rank(&DMatrix::from_fn(n, k + ker.ncols(), |i, j| if j < k { f[(i, j)] } else { ker[(i, j - k)] }), tol);
        let cap = k + ker.ncols() - dim_sum;
        let fp = perp(&omega, &f).unwrap();
        prop_assert_eq!(fp.ncols(), n - k + cap);
        // ker Ω ⊆ F^⊥
        if fp.ncols() > 0 && ker.ncols() > 0 {
            let pr = linalg::projector(&fp);
            prop_assert!((&pr * &ker - &ker).amax() < 1e-9);
        }
    }
}

/// Observables built from a fixed menu of smooth functions on the dual
/// bundle of a preset.
fn observables(spec: &amech::expr::SystemSpec) -> Vec<Arc<dyn Observable>> {
    let coords: Vec<String> = spec.base.iter().cloned().chain(spec.momenta()).collect();
    let pick = |k: usize| coords[k % coords.len()].clone();
    let srcs = [
        format!("{}*{} + sin({})", pick(0), pick(1), pick(2)),
        format!("{}^2 - {}*cos({})", pick(1), pick(3), pick(0)),
        format!("exp(0.3*{}) + {}*{}*{}", pick(2), pick(0), pick(1), pick(4)),
    ];
    srcs.iter().map(|s| Arc::new(ExprObservable::parse(s, spec).unwrap()) as Arc<dyn Observable>).collect()
}

#[test]
fn linear_poisson_bracket_axioms_on_every_preset() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for p in presets::all() {
        let chart = AlgebroidChart::from_spec(&p.spec).unwrap();
        let obs = observables(&p.spec);
        let (f, g, k) = (obs[0].clone(), obs[1].clone(), obs[2].clone());
        let fg = Arc::new(bracket_observable(chart.clone(), f.clone(), g.clone()));
        let gk = Arc::new(bracket_observable(chart.clone(), g.clone(), k.clone()));
        let kf = Arc::new(bracket_observable(chart.clone(), k.clone(), f.clone()));
        let gk_prod = Arc::new(amech::algebroid::FnObservable::new(p.spec.m(), {
            let (g, k) = (g.clone(), k.clone());
            move |x, q| Ok(g.value(x, q)? * k.value(x, q)?)
        }));
        let dual: Vec<String> = p.spec.base.iter().cloned().chain(p.spec.momenta()).collect();
        for _ in 0..100 {
            let z = p.sample(&dual, &mut rng);
            let m = p.spec.m();
            let at = DualPoint::new(z[..m].to_vec(), z[m..].to_vec());
            let b = |a: &dyn Observable, c: &dyn Observable| lie_poisson_bracket(&chart, a, c, &at).unwrap();
            assert_eq!(b(f.as_ref(), g.as_ref()), -b(g.as_ref(), f.as_ref()), "{}", p.id);
            // Leibniz: {F, GK} = {F, G} K + G {F, K}
            let (gv, kv) = (g.value(&at.x, &at.p).unwrap(), k.value(&at.x, &at.p).unwrap());
            let leibniz = b(f.as_ref(), gk_prod.as_ref()) - (b(f.as_ref(), g.as_ref()) * kv + gv * b(f.as_ref(), k.as_ref()));
            assert!(leibniz.abs() < 1e-7 * (1.0 + gv.abs() + kv.abs()), "{}: Leibniz {leibniz:e}", p.id);
            let jac = b(fg.as_ref(), k.as_ref()) + b(gk.as_ref(), f.as_ref()) + b(kf.as_ref(), g.as_ref());
            assert!(jac.abs() < 1e-9, "{}: Jacobi {jac:e}", p.id);
        }
    }
}

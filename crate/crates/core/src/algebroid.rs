//! Lie algebroid charts, the linear Poisson bracket on the dual bundle and
//! the canonical symplectic section.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{parse_expr, Bindings, CompiledExpr, EvalError, Expr, ParseError, SystemSpec};
use crate::numdiff;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum AlgebroidError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How chart derivatives were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivSource {
    Ad,
    Fd,
}

/// Structure functions `C^C_AB` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    n: usize,
    data: Vec<f64>,
}

impl Structure {
    pub fn zeros(n: usize) -> Self {
        Structure { n, data: vec![0.0; n * n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `C^c_ab`.
    pub fn get(&self, c: usize, a: usize, b: usize) -> f64 {
        self.data[(c * self.n + a) * self.n + b]
    }

    /// Sets `C^c_ab` and `C^c_ba = -C^c_ab`.
    pub fn set_antisym(&mut self, c: usize, a: usize, b: usize, v: f64) {
        let n = self.n;
        self.data[(c * n + a) * n + b] = v;
        self.data[(c * n + b) * n + a] = -v;
    }

    /// `(C·p)_AB = C^C_AB p_C`.
    pub fn contract_p(&self, p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |a, b| (0..self.n).map(|c| self.get(c, a, b) * p[c]).sum())
    }
}

pub type AnchorFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type StructureFn = Arc<dyn Fn(&[f64]) -> Structure + Send + Sync>;

#[derive(Clone)]
enum ChartKind {
    Expr {
        /// `anchor[A][i]`.
        anchor: Vec<Vec<CompiledExpr>>,
        /// Nonzero entries `(C, A, B)` with `A < B`.
        bracket: Vec<((usize, usize, usize), CompiledExpr)>,
        params: Vec<f64>,
    },
    Closure {
        anchor: AnchorFn,
        structure: StructureFn,
    },
}

/// A local chart of a Lie algebroid: anchor `ρ^i_A(x)` and structure
/// functions `C^C_AB(x)`.
#[derive(Clone)]
pub struct AlgebroidChart {
    m: usize,
    n: usize,
    kind: ChartKind,
}

impl std::fmt::Debug for AlgebroidChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AlgebroidChart {{ m: {}, n: {}, source: {:?} }}", self.m, self.n, self.source())
    }
}

impl AlgebroidChart {
    /// Chart from a parsed system; derivatives come from AD.
    pub fn from_spec(spec: &SystemSpec) -> Result<Self, AlgebroidError> {
        let mut vars: Vec<&str> = spec.base.iter().map(String::as_str).collect();
        vars.extend(spec.params.keys().map(String::as_str));
        let anchor = spec
            .anchor
            .iter()
            .map(|row| row.iter().map(|e| CompiledExpr::compile(e, &vars)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut bracket = Vec::new();
        for ((a, b), terms) in &spec.bracket {
            for (c, e) in terms {
                bracket.push(((*c, *a, *b), CompiledExpr::compile(e, &vars)?));
            }
        }
        Ok(AlgebroidChart {
            m: spec.m(),
            n: spec.n(),
            kind: ChartKind::Expr { anchor, bracket, params: spec.params.values().copied().collect() },
        })
    }

    /// Chart from closures; derivatives come from central differences.
    pub fn from_closures(m: usize, n: usize, anchor: AnchorFn, structure: StructureFn) -> Self {
        AlgebroidChart { m, n, kind: ChartKind::Closure { anchor, structure } }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn source(&self) -> DerivSource {
        match self.kind {
            ChartKind::Expr { .. } => DerivSource::Ad,
            ChartKind::Closure { .. } => DerivSource::Fd,
        }
    }

    fn inputs(x: &[f64], params: &[f64]) -> Vec<f64> {
        x.iter().chain(params).copied().collect()
    }

    /// Anchor matrix, `m × n`, entry `(i, A)` is `ρ^i_A`.
    pub fn anchor(&self, x: &[f64]) -> Result<DMatrix<f64>, AlgebroidError> {
        match &self.kind {
            ChartKind::Expr { anchor, params, .. } => {
                let z = Self::inputs(x, params);
                let mut r = DMatrix::zeros(self.m, self.n);
                for (a, row) in anchor.iter().enumerate() {
                    for (i, e) in row.iter().enumerate() {
                        r[(i, a)] = e.eval(&z)?;
                    }
                }
                Ok(r)
            }
            ChartKind::Closure { anchor, .. } => Ok(anchor(x)),
        }
    }

    pub fn structure(&self, x: &[f64]) -> Result<Structure, AlgebroidError> {
        match &self.kind {
            ChartKind::Expr { bracket, params, .. } => {
                let z = Self::inputs(x, params);
                let mut s = Structure::zeros(self.n);
                for ((c, a, b), e) in bracket {
                    s.set_antisym(*c, *a, *b, e.eval(&z)?);
                }
                Ok(s)
            }
            ChartKind::Closure { structure, .. } => Ok(structure(x)),
        }
    }

    /// `∂ρ/∂x^j` for each `j`.
    pub fn anchor_derivs(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>, AlgebroidError> {
        let mut out = vec![DMatrix::zeros(self.m, self.n); self.m];
        match &self.kind {
            ChartKind::Expr { anchor, params, .. } => {
                let z = Self::inputs(x, params);
                let wrt: Vec<usize> = (0..self.m).collect();
                for (a, row) in anchor.iter().enumerate() {
                    for (i, e) in row.iter().enumerate() {
                        let (_, g) = e.gradient(&z, &wrt)?;
                        for (j, gj) in g.iter().enumerate() {
                            out[j][(i, a)] = *gj;
                        }
                    }
                }
            }
            ChartKind::Closure { anchor, .. } => {
                for (j, d) in out.iter_mut().enumerate() {
                    let h = numdiff::central_step(x[j]);
                    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                    xp[j] += h;
                    xm[j] -= h;
                    *d = (anchor(&xp) - anchor(&xm)) / (2.0 * h);
                }
            }
        }
        Ok(out)
    }

    /// `∂C/∂x^j` for each `j`.
    pub fn structure_derivs(&self, x: &[f64]) -> Result<Vec<Structure>, AlgebroidError> {
        let mut out = vec![Structure::zeros(self.n); self.m];
        match &self.kind {
            ChartKind::Expr { bracket, params, .. } => {
                let z = Self::inputs(x, params);
                let wrt: Vec<usize> = (0..self.m).collect();
                for ((c, a, b), e) in bracket {
                    let (_, g) = e.gradient(&z, &wrt)?;
                    for (j, gj) in g.iter().enumerate() {
                        out[j].set_antisym(*c, *a, *b, *gj);
                    }
                }
            }
            ChartKind::Closure { structure, .. } => {
                for (j, d) in out.iter_mut().enumerate() {
                    let h = numdiff::central_step(x[j]);
                    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                    xp[j] += h;
                    xm[j] -= h;
                    let (sp, sm) = (structure(&xp), structure(&xm));
                    d.data = sp.data.iter().zip(&sm.data).map(|(p, q)| (p - q) / (2.0 * h)).collect();
                }
            }
        }
        Ok(out)
    }
}

/// Maximum residuals of the two structure equations at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub point: Vec<f64>,
    pub r1: f64,
    pub r2: f64,
    pub source: DerivSource,
}

/// Evaluates the anchor-homomorphism and Jacobi residuals at `x`.
pub fn check_structure(chart: &AlgebroidChart, x: &[f64]) -> Result<StructureReport, AlgebroidError> {
    let (m, n) = (chart.m(), chart.n());
    if x.len() != m {
        return Err(AlgebroidError::Dimension(format!("point has {} coordinates, base has {m}", x.len())));
    }
    let rho = chart.anchor(x)?;
    let drho = chart.anchor_derivs(x)?;
    let c = chart.structure(x)?;
    let dc = chart.structure_derivs(x)?;

    let mut r1: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for i in 0..m {
                let mut v = 0.0;
                for j in 0..m {
                    v += rho[(j, a)] * drho[j][(i, b)] - rho[(j, b)] * drho[j][(i, a)];
                }
                for cc in 0..n {
                    v -= rho[(i, cc)] * c.get(cc, a, b);
                }
                r1 = r1.max(v.abs());
            }
        }
    }

    let mut r2: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for cc in 0..n {
                for d in 0..n {
                    let mut v = 0.0;
                    for (p, q, r) in [(a, b, cc), (b, cc, a), (cc, a, b)] {
                        for i in 0..m {
                            v += rho[(i, p)] * dc[i].get(d, q, r);
                        }
                        for f in 0..n {
                            v += c.get(d, p, f) * c.get(f, q, r);
                        }
                    }
                    r2 = r2.max(v.abs());
                }
            }
        }
    }
    Ok(StructureReport { point: x.to_vec(), r1, r2, source: chart.source() })
}

/// A point `(x, p)` of the dual bundle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl DualPoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        DualPoint { x, p }
    }
}

/// A function on the dual bundle with its partial derivatives.
pub trait Observable: Send + Sync {
    /// Value, `∂F/∂x` and `∂F/∂p`.
    fn value_grad(&self, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AlgebroidError>;

    fn value(&self, x: &[f64], p: &[f64]) -> Result<f64, AlgebroidError> {
        Ok(self.value_grad(x, p)?.0)
    }
}

/// Observable given by an expression in base coordinates, momenta and
/// parameters; differentiated exactly.
#[derive(Clone, Debug)]
pub struct ExprObservable {
    compiled: CompiledExpr,
    m: usize,
    n: usize,
    params: Vec<f64>,
}

impl ExprObservable {
    pub fn new(expr: &Expr, base: &[String], momenta: &[String], params: &Bindings) -> Result<Self, AlgebroidError> {
        let mut vars: Vec<&str> = base.iter().map(String::as_str).collect();
        vars.extend(momenta.iter().map(String::as_str));
        vars.extend(params.keys().map(String::as_str));
        Ok(ExprObservable {
            compiled: CompiledExpr::compile(expr, &vars)?,
            m: base.len(),
            n: momenta.len(),
            params: params.values().copied().collect(),
        })
    }

    /// Parses `src` against the coordinate names of `spec`.
    pub fn parse(src: &str, spec: &SystemSpec) -> Result<Self, AlgebroidError> {
        Self::new(&parse_expr(src)?, &spec.base, &spec.momenta(), &spec.params)
    }
}

impl Observable for ExprObservable {
    fn value_grad(&self, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AlgebroidError> {
        let z: Vec<f64> = x.iter().chain(p).chain(&self.params).copied().collect();
        let wrt: Vec<usize> = (0..self.m + self.n).collect();
        let (v, g) = self.compiled.gradient(&z, &wrt)?;
        Ok((v, g[..self.m].to_vec(), g[self.m..].to_vec()))
    }
}

type ScalarFn = dyn Fn(&[f64], &[f64]) -> Result<f64, AlgebroidError> + Send + Sync;

/// Observable from a closure, differentiated by five-point differences.
#[derive(Clone)]
pub struct FnObservable {
    f: Arc<ScalarFn>,
    m: usize,
}

impl FnObservable {
    pub fn new(m: usize, f: impl Fn(&[f64], &[f64]) -> Result<f64, AlgebroidError> + Send + Sync + 'static) -> Self {
        FnObservable { f: Arc::new(f), m }
    }
}

impl Observable for FnObservable {
    fn value_grad(&self, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AlgebroidError> {
        let m = self.m;
        let z: Vec<f64> = x.iter().chain(p).copied().collect();
        let g = numdiff::gradient5(|w: &[f64]| (self.f)(&w[..m], &w[m..]), &z, 1e-3)?;
        Ok(((self.f)(x, p)?, g[..m].to_vec(), g[m..].to_vec()))
    }

    fn value(&self, x: &[f64], p: &[f64]) -> Result<f64, AlgebroidError> {
        (self.f)(x, p)
    }
}

fn bracket_from_grads(chart: &AlgebroidChart, at: &DualPoint, fx: &[f64], fp: &[f64], gx: &[f64], gp: &[f64]) -> Result<f64, AlgebroidError> {
    let rho = chart.anchor(&at.x)?;
    let c = chart.structure(&at.x)?;
    let (m, n) = (chart.m(), chart.n());
    let mut v = 0.0;
    for a in 0..n {
        for i in 0..m {
            v += rho[(i, a)] * (fx[i] * gp[a] - fp[a] * gx[i]);
        }
    }
    let cp = c.contract_p(&at.p);
    // Pairing a < b keeps the bracket exactly antisymmetric in floating point.
    for a in 0..n {
        for b in a + 1..n {
            v -= cp[(a, b)] * (fp[a] * gp[b] - fp[b] * gp[a]);
        }
    }
    Ok(v)
}

/// The linear Poisson bracket
/// `{F,G} = ρ^i_A (F_x G_p − F_p G_x) − C^C_AB p_C F_pA G_pB`.
pub fn lie_poisson_bracket(chart: &AlgebroidChart, f: &dyn Observable, g: &dyn Observable, at: &DualPoint) -> Result<f64, AlgebroidError> {
    let (_, fx, fp) = f.value_grad(&at.x, &at.p)?;
    let (_, gx, gp) = g.value_grad(&at.x, &at.p)?;
    bracket_from_grads(chart, at, &fx, &fp, &gx, &gp)
}

/// `{F, G}` as an observable in its own right, for nested brackets.
pub fn bracket_observable(chart: AlgebroidChart, f: Arc<dyn Observable>, g: Arc<dyn Observable>) -> FnObservable {
    let m = chart.m();
    FnObservable::new(m, move |x, p| {
        lie_poisson_bracket(&chart, f.as_ref(), g.as_ref(), &DualPoint::new(x.to_vec(), p.to_vec()))
    })
}

/// The Hamiltonian vector field of `H` in coordinates:
/// `ẋ = ρ ∂H/∂p`, `ṗ_A = −(ρ^i_A ∂H/∂x^i + C^C_AB p_C ∂H/∂p_B)`.
pub fn hamilton_rhs(chart: &AlgebroidChart, h: &dyn Observable, at: &DualPoint) -> Result<(Vec<f64>, Vec<f64>), AlgebroidError> {
    let (_, hx, hp) = h.value_grad(&at.x, &at.p)?;
    hamilton_rhs_from_grads(chart, at, &hx, &hp)
}

pub(crate) fn hamilton_rhs_from_grads(chart: &AlgebroidChart, at: &DualPoint, hx: &[f64], hp: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AlgebroidError> {
    let rho = chart.anchor(&at.x)?;
    let c = chart.structure(&at.x)?;
    let (m, n) = (chart.m(), chart.n());
    let xdot: Vec<f64> = (0..m).map(|i| (0..n).map(|a| rho[(i, a)] * hp[a]).sum()).collect();
    let cp = c.contract_p(&at.p);
    let pdot: Vec<f64> = (0..n)
        .map(|a| {
            let s1: f64 = (0..m).map(|i| rho[(i, a)] * hx[i]).sum();
            let s2: f64 = (0..n).map(|b| cp[(a, b)] * hp[b]).sum();
            -(s1 + s2)
        })
        .collect();
    Ok((xdot, pdot))
}

/// Matrix of the canonical symplectic section in the basis `{Y_A, P^A}`:
/// `[[C·p, I], [−I, 0]]`.
pub fn omega_e_matrix(chart: &AlgebroidChart, at: &DualPoint) -> Result<DMatrix<f64>, AlgebroidError> {
    let n = chart.n();
    let cp = chart.structure(&at.x)?.contract_p(&at.p);
    let mut om = DMatrix::zeros(2 * n, 2 * n);
    om.view_mut((0, 0), (n, n)).copy_from(&cp);
    for a in 0..n {
        om[(a, n + a)] = 1.0;
        om[(n + a, a)] = -1.0;
    }
    Ok(om)
}

/// Algebroid differential of a base function from its gradient:
/// `(d^E f)_A = ρ^i_A ∂f/∂x^i`.
pub fn d_e_function(chart: &AlgebroidChart, x: &[f64], grad_f: &[f64]) -> Result<Vec<f64>, AlgebroidError> {
    let rho = chart.anchor(x)?;
    Ok((0..chart.n()).map(|a| (0..chart.m()).map(|i| rho[(i, a)] * grad_f[i]).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_system;

    fn so3() -> SystemSpec {
        parse_system("system so3\nbase []\nfiber [e1,e2,e3]\nanchor zero\nbracket { [e1,e2] = e3; [e2,e3] = e1; [e3,e1] = e2 }\nlagrangian = 0.5*(e1^2+e2^2+e3^2)").unwrap()
    }

    #[test]
    fn so3_bracket_of_momenta() {
        let s = so3();
        let chart = AlgebroidChart::from_spec(&s).unwrap();
        let p1 = ExprObservable::parse("p1", &s).unwrap();
        let p2 = ExprObservable::parse("p2", &s).unwrap();
        let v = lie_poisson_bracket(&chart, &p1, &p2, &DualPoint::new(vec![], vec![0.0, 0.0, 2.0])).unwrap();
        assert_eq!(v, -2.0);
    }

    #[test]
    fn so3_omega_block() {
        let chart = AlgebroidChart::from_spec(&so3()).unwrap();
        let om = omega_e_matrix(&chart, &DualPoint::new(vec![], vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(om[(1, 2)], 1.0);
        assert_eq!(om[(2, 1)], -1.0);
        assert_eq!(om[(0, 1)], 0.0);
        assert_eq!(om[(0, 3)], 1.0);
        assert_eq!(om[(3, 0)], -1.0);
        assert_eq!(om, -om.transpose());
    }

    #[test]
    fn bad_bracket_violates_homomorphism() {
        let s = parse_system("system bad\nbase [x, y]\nfiber [e1, e2]\nanchor { e1 -> (1, 0); e2 -> (0, 1) }\nbracket { [e1,e2] = e1 }\nlagrangian = e1^2").unwrap();
        let chart = AlgebroidChart::from_spec(&s).unwrap();
        let r = check_structure(&chart, &[0.2, 0.3]).unwrap();
        assert_eq!(r.r1, 1.0);
        assert_eq!(r.source, DerivSource::Ad);
    }

    #[test]
    fn closure_chart_uses_differences() {
        let anchor: AnchorFn = Arc::new(|x: &[f64]| DMatrix::from_row_slice(1, 2, &[1.0, x[0].exp()]));
        let structure: StructureFn = Arc::new(|_x: &[f64]| {
            let mut s = Structure::zeros(2);
            s.set_antisym(1, 0, 1, 1.0);
            s
        });
        // [e1, e2] = e2 with ρ(e1) = ∂x, ρ(e2) = exp(x) ∂x is a valid algebroid.
        let chart = AlgebroidChart::from_closures(1, 2, anchor, structure);
        let r = check_structure(&chart, &[0.7]).unwrap();
        assert_eq!(r.source, DerivSource::Fd);
        assert!(r.r1 < 1e-9 && r.r2 == 0.0, "{r:?}");
    }

    #[test]
    fn d_e_of_base_function() {
        let s = parse_system("system t\nbase [x, y]\nfiber [e1, e2]\nanchor { e1 -> (1, 0); e2 -> (y, x) }\nlagrangian = e1^2").unwrap();
        let chart = AlgebroidChart::from_spec(&s).unwrap();
        // f = x*y: grad = (y, x)
        let d = d_e_function(&chart, &[2.0, 3.0], &[3.0, 2.0]).unwrap();
        assert_eq!(d, vec![3.0, 3.0 * 3.0 + 2.0 * 2.0]);
    }
}

//! Vakonomic mechanics on Lie algebroids: constraints `y^α = Ψ^α(x, y^a)`
//! handled through the Pontryagin Hamiltonian on `W_0 = M ×_Q E*`.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::{hamilton_rhs_from_grads, lie_poisson_bracket, AlgebroidChart, AlgebroidError, DualPoint, Observable};
use crate::expr::{CompiledExpr, SystemSpec};
use crate::linalg;
use crate::Error;

#[derive(Debug, Error)]
pub enum VakonomicError {
    #[error(transparent)]
    Eval(Box<Error>),
    #[error("regularity matrix is singular: sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    SingularR { sigma_min: f64, sigma_max: f64 },
    #[error("solving the constraints for the free velocities failed after {iterations} iterations (residual {residual:e})")]
    MuSolveFailed { iterations: usize, residual: f64 },
    #[error("trajectory has {0} samples; at least 3 are needed")]
    TrajectoryTooShort(usize),
    #[error("{0}")]
    Invalid(String),
}

macro_rules! wrap_from {
    ($($t:ty),*) => {$(
        impl From<$t> for VakonomicError {
            fn from(e: $t) -> Self {
                VakonomicError::Eval(Box::new(e.into()))
            }
        }
    )*};
}
wrap_from!(crate::expr::EvalError, crate::expr::ParseError, AlgebroidError);

/// A point `(x, y^a, p_α)` of the vakonomic phase space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VakState {
    pub x: Vec<f64>,
    pub ya: Vec<f64>,
    pub palpha: Vec<f64>,
}

impl VakState {
    pub fn new(x: Vec<f64>, ya: Vec<f64>, palpha: Vec<f64>) -> Self {
        VakState { x, ya, palpha }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.ya).chain(&self.palpha).copied().collect()
    }
}

/// Values and derivatives of `L̃` and `Ψ` over `(x, y^a)`.
struct Jet {
    lg: Vec<f64>,
    lh: DMatrix<f64>,
    psi: Vec<f64>,
    pg: Vec<Vec<f64>>,
    ph: Vec<DMatrix<f64>>,
}

/// A Lagrangian subject to vakonomic constraints.
#[derive(Clone, Debug)]
pub struct VakonomicSystem {
    chart: AlgebroidChart,
    free: Vec<usize>,
    constrained: Vec<usize>,
    ltilde: CompiledExpr,
    psi: Vec<CompiledExpr>,
    params: Vec<f64>,
}

impl VakonomicSystem {
    /// Uses the system's vakonomic block; without one every velocity is free.
    pub fn new(spec: &SystemSpec) -> Result<Self, VakonomicError> {
        let chart = AlgebroidChart::from_spec(spec)?;
        let (constrained, psi_exprs) = match &spec.vakonomic {
            Some(v) => (v.constrained.clone(), v.psi.clone()),
            None => (vec![], vec![]),
        };
        let free: Vec<usize> = (0..spec.n()).filter(|a| !constrained.contains(a)).collect();
        let mut vars: Vec<&str> = spec.base.iter().map(String::as_str).collect();
        vars.extend(free.iter().map(|a| spec.fiber[*a].as_str()));
        vars.extend(spec.params.keys().map(String::as_str));
        let ltilde = CompiledExpr::compile(&spec.restricted_lagrangian(), &vars)?;
        let psi = psi_exprs.iter().map(|e| CompiledExpr::compile(e, &vars)).collect::<Result<Vec<_>, _>>()?;
        Ok(VakonomicSystem { chart, free, constrained, ltilde, psi, params: spec.params.values().copied().collect() })
    }

    pub fn chart(&self) -> &AlgebroidChart {
        &self.chart
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn m(&self) -> usize {
        self.chart.m()
    }

    pub fn n(&self) -> usize {
        self.chart.n()
    }

    /// State dimension `m + |free| + |constrained|`.
    pub fn state_dim(&self) -> usize {
        self.m() + self.n()
    }

    pub fn split(&self, flat: &[f64]) -> VakState {
        let (m, k) = (self.m(), self.free.len());
        VakState::new(flat[..m].to_vec(), flat[m..m + k].to_vec(), flat[m + k..].to_vec())
    }

    fn inputs(&self, x: &[f64], ya: &[f64]) -> Vec<f64> {
        x.iter().chain(ya).chain(&self.params).copied().collect()
    }

    fn jet(&self, x: &[f64], ya: &[f64]) -> Result<Jet, VakonomicError> {
        let z = self.inputs(x, ya);
        let wrt: Vec<usize> = (0..self.m() + self.free.len()).collect();
        let (_, lg, lh) = self.ltilde.hessian(&z, &wrt)?;
        let mut j = Jet { lg, lh, psi: vec![], pg: vec![], ph: vec![] };
        for p in &self.psi {
            let (v, g, h) = p.hessian(&z, &wrt)?;
            j.psi.push(v);
            j.pg.push(g);
            j.ph.push(h);
        }
        Ok(j)
    }

    fn psi_values(&self, x: &[f64], ya: &[f64]) -> Result<Vec<f64>, VakonomicError> {
        let z = self.inputs(x, ya);
        Ok(self.psi.iter().map(|p| p.eval(&z)).collect::<Result<Vec<_>, _>>()?)
    }

    /// Full velocity `Y` with `Y^a = y^a` and `Y^α = Ψ^α`.
    pub fn full_velocity(&self, x: &[f64], ya: &[f64]) -> Result<Vec<f64>, VakonomicError> {
        let psi = self.psi_values(x, ya)?;
        Ok(self.assemble(ya, &psi))
    }

    fn assemble(&self, free_part: &[f64], constrained_part: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for (k, a) in self.free.iter().enumerate() {
            y[*a] = free_part[k];
        }
        for (k, a) in self.constrained.iter().enumerate() {
            y[*a] = constrained_part[k];
        }
        y
    }

    fn dependent_from_jet(&self, j: &Jet, palpha: &[f64]) -> Vec<f64> {
        let m = self.m();
        (0..self.free.len())
            .map(|a| j.lg[m + a] - palpha.iter().zip(&j.pg).map(|(p, g)| p * g[m + a]).sum::<f64>())
            .collect()
    }

    /// Momenta `p_a = ∂L̃/∂y^a − p_α ∂Ψ^α/∂y^a` fixed by `φ = 0`.
    pub fn dependent_momenta(&self, s: &VakState) -> Result<Vec<f64>, VakonomicError> {
        let z = self.inputs(&s.x, &s.ya);
        let m = self.m();
        let wrt: Vec<usize> = (m..m + self.free.len()).collect();
        let (_, lg) = self.ltilde.gradient(&z, &wrt)?;
        let mut pa = lg;
        for (p, psi) in s.palpha.iter().zip(&self.psi) {
            let (_, g) = psi.gradient(&z, &wrt)?;
            for (a, ga) in g.iter().enumerate() {
                pa[a] -= p * ga;
            }
        }
        Ok(pa)
    }

    /// All momenta `p_A` of a state.
    pub fn full_momenta(&self, s: &VakState) -> Result<Vec<f64>, VakonomicError> {
        let pa = self.dependent_momenta(s)?;
        Ok(self.assemble(&pa, &s.palpha))
    }

    /// `H_W0 = p_a y^a + p_α Ψ^α − L̃`.
    pub fn pontryagin_h(&self, x: &[f64], p: &[f64], ya: &[f64]) -> Result<f64, VakonomicError> {
        let z = self.inputs(x, ya);
        let y = self.full_velocity(x, ya)?;
        Ok(p.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - self.ltilde.eval(&z)?)
    }

    /// `φ_a = p_a + p_α ∂Ψ^α/∂y^a − ∂L̃/∂y^a`.
    pub fn w1_constraints(&self, x: &[f64], p: &[f64], ya: &[f64]) -> Result<Vec<f64>, VakonomicError> {
        let palpha: Vec<f64> = self.constrained.iter().map(|a| p[*a]).collect();
        let dep = self.dependent_momenta(&VakState::new(x.to_vec(), ya.to_vec(), palpha))?;
        Ok(self.free.iter().zip(dep).map(|(a, d)| p[*a] - d).collect())
    }

    fn r_from_jet(&self, j: &Jet, palpha: &[f64]) -> DMatrix<f64> {
        let (m, k) = (self.m(), self.free.len());
        let mut r = j.lh.view((m, m), (k, k)).into_owned();
        for (p, h) in palpha.iter().zip(&j.ph) {
            r -= h.view((m, m), (k, k)) * *p;
        }
        r
    }

    /// `R_ab = ∂²L̃/∂y^a∂y^b − p_α ∂²Ψ^α/∂y^a∂y^b`.
    pub fn regularity_matrix(&self, s: &VakState) -> Result<Regularity, VakonomicError> {
        let j = self.jet(&s.x, &s.ya)?;
        let r = self.r_from_jet(&j, &s.palpha);
        let (sigma_min, sigma_max) = linalg::sigma_range(&r);
        let regular = r.nrows() == 0 || (sigma_max > 0.0 && sigma_min > linalg::rank_tol() * sigma_max);
        Ok(Regularity { det: r.determinant(), sigma_min, sigma_max, regular, r })
    }

    /// Right-hand side `(ẋ, ẏ^a, ṗ_α)` of the vakonomic equations.
    pub fn vakonomic_rhs(&self, s: &VakState) -> Result<Vec<f64>, VakonomicError> {
        let (m, n, k) = (self.m(), self.n(), self.free.len());
        let j = self.jet(&s.x, &s.ya)?;
        let rho = self.chart.anchor(&s.x)?;
        let c = self.chart.structure(&s.x)?;
        let y = self.assemble(&s.ya, &j.psi);
        let pa = self.dependent_from_jet(&j, &s.palpha);
        let p = self.assemble(&pa, &s.palpha);

        let xdot: Vec<f64> = (0..m).map(|i| (0..n).map(|b| rho[(i, b)] * y[b]).sum()).collect();
        // F_i = ∂L̃/∂x^i − p_α ∂Ψ^α/∂x^i
        let fx: Vec<f64> = (0..m).map(|i| j.lg[i] - s.palpha.iter().zip(&j.pg).map(|(q, g)| q * g[i]).sum::<f64>()).collect();
        // (Y C p)_A = Y^B C^D_AB p_D
        let ycp = |a: usize| -> f64 { (0..n).map(|b| y[b] * (0..n).map(|d| c.get(d, a, b) * p[d]).sum::<f64>()).sum() };
        let force = |a: usize| -> f64 { (0..m).map(|i| fx[i] * rho[(i, a)]).sum::<f64>() - ycp(a) };

        let pdot: Vec<f64> = self.constrained.iter().map(|&al| force(al)).collect();
        let r = self.r_from_jet(&j, &s.palpha);
        let mut rhs = DVector::zeros(k);
        for (ai, &a) in self.free.iter().enumerate() {
            let mut v = force(a);
            for i in 0..m {
                let mixed = j.lh[(i, m + ai)] - s.palpha.iter().zip(&j.ph).map(|(q, h)| q * h[(i, m + ai)]).sum::<f64>();
                v -= mixed * xdot[i];
            }
            for (al, pd) in pdot.iter().enumerate() {
                v += pd * j.pg[al][m + ai];
            }
            rhs[ai] = v;
        }
        let ydot = if k == 0 {
            DVector::zeros(0)
        } else {
            let (sigma_min, sigma_max) = linalg::sigma_range(&r);
            if !(sigma_max > 0.0 && sigma_min > linalg::rank_tol() * sigma_max) {
                return Err(VakonomicError::SingularR { sigma_min, sigma_max });
            }
            linalg::lu_solve(&r, &rhs).ok_or(VakonomicError::SingularR { sigma_min, sigma_max })?
        };
        Ok(xdot.into_iter().chain(ydot.iter().copied()).chain(pdot).collect())
    }

    /// Solves `φ(x, p, y) = 0` for the free velocities by Newton's method.
    pub fn solve_mu(&self, x: &[f64], p: &[f64], seed: &[f64]) -> Result<Vec<f64>, VakonomicError> {
        let palpha: Vec<f64> = self.constrained.iter().map(|a| p[*a]).collect();
        let scale = p.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut y = seed.to_vec();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let phi = DVector::from_vec(self.w1_constraints(x, p, &y)?);
            last = phi.norm();
            if last <= 1e-12 * scale {
                return Ok(y);
            }
            let j = self.jet(x, &y)?;
            let r = self.r_from_jet(&j, &palpha);
            // ∂φ/∂y = −R
            let Some(step) = linalg::lu_solve(&r, &phi) else {
                break;
            };
            for (v, s) in y.iter_mut().zip(step.iter()) {
                *v += s;
            }
        }
        let phi = DVector::from_vec(self.w1_constraints(x, p, &y)?);
        if phi.norm() <= 1e-12 * scale {
            return Ok(y);
        }
        Err(VakonomicError::MuSolveFailed { iterations: 50, residual: last.min(phi.norm()) })
    }

    /// The Hamiltonian section on `W_1` at `(x, p)`.
    pub fn hamiltonian_section(&self, x: &[f64], p: &[f64], seed: &[f64]) -> Result<Section, VakonomicError> {
        let mu = self.solve_mu(x, p, seed)?;
        let (_, hx, hp) = self.h_w1_grads(x, p, &mu)?;
        let (xdot, pdot) = hamilton_rhs_from_grads(&self.chart, &DualPoint::new(x.to_vec(), p.to_vec()), &hx, &hp)?;
        Ok(Section { y: hp, xdot, pdot, mu })
    }

    /// `H_W1` and its gradient at a point of `W_1` with `y^a = μ^a`.
    fn h_w1_grads(&self, x: &[f64], p: &[f64], mu: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), VakonomicError> {
        let m = self.m();
        let z = self.inputs(x, mu);
        let wrt: Vec<usize> = (0..m).collect();
        let (l, lx) = self.ltilde.gradient(&z, &wrt)?;
        let mut hx: Vec<f64> = lx.iter().map(|v| -v).collect();
        let mut psi = Vec::with_capacity(self.psi.len());
        for (al, e) in self.psi.iter().enumerate() {
            let (v, g) = e.gradient(&z, &wrt)?;
            let pa = p[self.constrained[al]];
            for i in 0..m {
                hx[i] += pa * g[i];
            }
            psi.push(v);
        }
        let y = self.assemble(mu, &psi);
        let h = p.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - l;
        Ok((h, hx, y))
    }

    /// `H_W1` as an observable on the dual bundle. The free velocities are
    /// found by Newton's method seeded at the previous solution.
    pub fn w1_observable(&self, seed: Vec<f64>) -> W1Observable<'_> {
        W1Observable { sys: self, last: Mutex::new(seed) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Regularity {
    #[serde(skip)]
    pub r: DMatrix<f64>,
    pub det: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub regular: bool,
}

/// Components of the Hamiltonian section: the fiber part `Y = ∂H/∂p`, its
/// anchor image and the momentum rates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Section {
    pub y: Vec<f64>,
    pub xdot: Vec<f64>,
    pub pdot: Vec<f64>,
    pub mu: Vec<f64>,
}

/// `H_W1(x, p) = H_W0(x, p, μ(x, p))`.
pub struct W1Observable<'a> {
    sys: &'a VakonomicSystem,
    last: Mutex<Vec<f64>>,
}

impl Observable for W1Observable<'_> {
    fn value_grad(&self, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AlgebroidError> {
        let wrap = |e: VakonomicError| match e {
            VakonomicError::Eval(b) => match *b {
                Error::Algebroid(a) => a,
                Error::Eval(e) => AlgebroidError::Eval(e),
                other => AlgebroidError::Dimension(other.to_string()),
            },
            other => AlgebroidError::Dimension(other.to_string()),
        };
        let seed = self.last.lock().expect("seed lock").clone();
        let mu = self.sys.solve_mu(x, p, &seed).map_err(wrap)?;
        *self.last.lock().expect("seed lock") = mu.clone();
        self.sys.h_w1_grads(x, p, &mu).map_err(wrap)
    }
}

/// The vakonomic bracket is the linear Poisson bracket of `E*`.
pub fn vakonomic_bracket(sys: &VakonomicSystem, f: &dyn Observable, g: &dyn Observable, at: &DualPoint) -> Result<f64, AlgebroidError> {
    lie_poisson_bracket(sys.chart(), f, g, at)
}

/// Largest deviation from `dγ/dt = ad*_Y γ` along sampled states of a
/// system on a Lie algebra, using centered differences in time. `γ` is the
/// full momentum, which equals `(∂L̃/∂y^a, p_α)` for affine constraints.
pub fn euler_poincare_residual(sys: &VakonomicSystem, times: &[f64], states: &[VakState]) -> Result<f64, VakonomicError> {
    if sys.m() != 0 {
        return Err(VakonomicError::Invalid("the Euler–Poincaré check needs a Lie algebra (empty base)".into()));
    }
    if states.len() < 3 || times.len() != states.len() {
        return Err(VakonomicError::TrajectoryTooShort(states.len().min(times.len())));
    }
    let n = sys.n();
    let c = sys.chart().structure(&[])?;
    let gammas = states.iter().map(|s| sys.full_momenta(s)).collect::<Result<Vec<_>, _>>()?;
    let mut worst = 0.0f64;
    for k in 1..states.len() - 1 {
        let dt = times[k + 1] - times[k - 1];
        let y = sys.full_velocity(&states[k].x, &states[k].ya)?;
        let g = &gammas[k];
        for a in 0..n {
            let dg = (gammas[k + 1][a] - gammas[k - 1][a]) / dt;
            // (ad*_Y γ)_A = γ_C Y^B C^C_BA
            let ad: f64 = (0..n).map(|b| y[b] * (0..n).map(|cc| g[cc] * c.get(cc, b, a)).sum::<f64>()).sum();
            worst = worst.max((dg - ad).abs());
        }
    }
    Ok(worst)
}

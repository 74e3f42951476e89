//! Lagrangian and Hamiltonian dynamics on a Lie algebroid.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::{hamilton_rhs_from_grads, AlgebroidChart, AlgebroidError, DualPoint, Observable};
use crate::expr::{CompiledExpr, EvalError, SystemSpec};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error("singular Hessian: sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    SingularHessian { sigma_min: f64, sigma_max: f64 },
    #[error("Legendre inverse did not converge after {iterations} iterations (residual {residual:e})")]
    LegendreInverse { iterations: usize, residual: f64 },
}

impl From<EvalError> for DynamicsError {
    fn from(e: EvalError) -> Self {
        DynamicsError::Algebroid(e.into())
    }
}

/// A point `(x, y)` of the algebroid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        EPoint { x, y }
    }
}

/// Value and first and second derivatives of `L` at a point.
#[derive(Clone, Debug)]
pub struct LagrangianJet {
    pub l: f64,
    pub lx: Vec<f64>,
    pub ly: Vec<f64>,
    /// `∂²L/∂x^i∂y^A`, `m × n`.
    pub lxy: DMatrix<f64>,
    /// `∂²L/∂y^A∂y^B`.
    pub w: DMatrix<f64>,
}

/// A Lagrangian on a Lie algebroid chart.
#[derive(Clone, Debug)]
pub struct LagrangianSystem {
    chart: AlgebroidChart,
    lag: CompiledExpr,
    params: Vec<f64>,
}

impl LagrangianSystem {
    pub fn new(spec: &SystemSpec) -> Result<Self, DynamicsError> {
        let chart = AlgebroidChart::from_spec(spec)?;
        let mut vars: Vec<&str> = spec.base.iter().map(String::as_str).collect();
        vars.extend(spec.fiber.iter().map(String::as_str));
        vars.extend(spec.params.keys().map(String::as_str));
        let lag = CompiledExpr::compile(&spec.lagrangian, &vars)?;
        Ok(LagrangianSystem { chart, lag, params: spec.params.values().copied().collect() })
    }

    pub fn chart(&self) -> &AlgebroidChart {
        &self.chart
    }

    pub fn m(&self) -> usize {
        self.chart.m()
    }

    pub fn n(&self) -> usize {
        self.chart.n()
    }

    fn inputs(&self, at: &EPoint) -> Vec<f64> {
        at.x.iter().chain(&at.y).chain(&self.params).copied().collect()
    }

    pub fn value(&self, at: &EPoint) -> Result<f64, DynamicsError> {
        Ok(self.lag.eval(&self.inputs(at))?)
    }

    pub fn jet(&self, at: &EPoint) -> Result<LagrangianJet, DynamicsError> {
        let (m, n) = (self.m(), self.n());
        let wrt: Vec<usize> = (0..m + n).collect();
        let (l, g, h) = self.lag.hessian(&self.inputs(at), &wrt)?;
        Ok(LagrangianJet {
            l,
            lx: g[..m].to_vec(),
            ly: g[m..].to_vec(),
            lxy: h.view((0, m), (m, n)).into_owned(),
            w: h.view((m, m), (n, n)).into_owned(),
        })
    }

    /// `∂L/∂y` only; cheaper than a full jet.
    pub fn fiber_derivative(&self, at: &EPoint) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
        let m = self.m();
        let wrt: Vec<usize> = (0..m + self.n()).collect();
        let (_, g) = self.lag.gradient(&self.inputs(at), &wrt)?;
        Ok((g[..m].to_vec(), g[m..].to_vec()))
    }

    /// Lagrangian energy `E_L = ∂L/∂y^A y^A − L`.
    pub fn energy(&self, at: &EPoint) -> Result<f64, DynamicsError> {
        let m = self.m();
        let wrt: Vec<usize> = (m..m + self.n()).collect();
        let (l, ly) = self.lag.gradient(&self.inputs(at), &wrt)?;
        Ok(ly.iter().zip(&at.y).map(|(a, b)| a * b).sum::<f64>() - l)
    }
}

/// Cartan 2-section, energy and its differential at a point, in the basis
/// `{X_A, V_A}` of the prolongation.
#[derive(Clone, Debug)]
pub struct CartanData {
    /// `ω_L(u, v) = uᵀ Ω v`.
    pub omega: DMatrix<f64>,
    pub energy: f64,
    /// Components of `d E_L` on `{X_A, V_A}`.
    pub d_energy: Vec<f64>,
    pub w: DMatrix<f64>,
}

pub fn cartan(sys: &LagrangianSystem, at: &EPoint) -> Result<CartanData, DynamicsError> {
    let (m, n) = (sys.m(), sys.n());
    let j = sys.jet(at)?;
    let rho = sys.chart().anchor(&at.x)?;
    let c = sys.chart().structure(&at.x)?;
    // Contraction of mixed derivatives with the anchor: (L_xy ρ)_{AB} = ∂²L/∂x^i∂y^A ρ^i_B
    let lxy_rho = j.lxy.transpose() * &rho;
    let cp = c.contract_p(&j.ly);
    let t = &lxy_rho - lxy_rho.transpose() + cp;
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    omega.view_mut((0, 0), (n, n)).copy_from(&t);
    omega.view_mut((0, n), (n, n)).copy_from(&j.w);
    omega.view_mut((n, 0), (n, n)).copy_from(&(-&j.w));

    let energy = j.ly.iter().zip(&at.y).map(|(a, b)| a * b).sum::<f64>() - j.l;
    let y = DVector::from_column_slice(&at.y);
    let de_dx = &j.lxy * &y - DVector::from_column_slice(&j.lx);
    let mut d_energy = vec![0.0; 2 * n];
    for a in 0..n {
        d_energy[a] = (0..m).map(|i| rho[(i, a)] * de_dx[i]).sum();
    }
    let de_dy = &j.w * &y;
    d_energy[n..].copy_from_slice(de_dy.as_slice());
    Ok(CartanData { omega, energy, d_energy, w: j.w })
}

/// Legendre map `(x, y) ↦ (x, ∂L/∂y)`.
pub fn legendre(sys: &LagrangianSystem, at: &EPoint) -> Result<DualPoint, DynamicsError> {
    let (_, ly) = sys.fiber_derivative(at)?;
    Ok(DualPoint::new(at.x.clone(), ly))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Regularity {
    pub regular: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Regular iff `σ_min(W) > tol · σ_max(W)`.
pub fn is_regular(sys: &LagrangianSystem, at: &EPoint) -> Result<Regularity, DynamicsError> {
    let w = sys.jet(at)?.w;
    Ok(regularity_of(&w))
}

pub(crate) fn regularity_of(w: &DMatrix<f64>) -> Regularity {
    let (sigma_min, sigma_max) = linalg::sigma_range(w);
    Regularity { regular: sigma_max > 0.0 && sigma_min > linalg::rank_tol() * sigma_max, sigma_min, sigma_max }
}

/// Right-hand side of the Euler–Lagrange equations, `(ẋ, ẏ)`.
pub fn euler_lagrange_rhs(sys: &LagrangianSystem, at: &EPoint) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    let (m, n) = (sys.m(), sys.n());
    let j = sys.jet(at)?;
    let reg = regularity_of(&j.w);
    if !reg.regular {
        return Err(DynamicsError::SingularHessian { sigma_min: reg.sigma_min, sigma_max: reg.sigma_max });
    }
    let rho = sys.chart().anchor(&at.x)?;
    let c = sys.chart().structure(&at.x)?;
    let y = DVector::from_column_slice(&at.y);
    let xdot = &rho * &y;
    let b = el_forcing(&j, &rho, &c, &y, m, n);
    let f = linalg::lu_solve(&j.w, &(-b)).ok_or(DynamicsError::SingularHessian { sigma_min: reg.sigma_min, sigma_max: reg.sigma_max })?;
    Ok((xdot.as_slice().to_vec(), f.as_slice().to_vec()))
}

/// `b_A = ∂²L/∂x^i∂y^A ρ^i_B y^B + ∂L/∂y^C C^C_AB y^B − ρ^i_A ∂L/∂x^i`;
/// the equations read `W ẏ = −b`.
pub(crate) fn el_forcing(j: &LagrangianJet, rho: &DMatrix<f64>, c: &crate::algebroid::Structure, y: &DVector<f64>, m: usize, n: usize) -> DVector<f64> {
    let xdot = rho * y;
    let mut b = j.lxy.transpose() * xdot;
    let cp = c.contract_p(&j.ly);
    b += cp * y;
    for a in 0..n {
        b[a] -= (0..m).map(|i| rho[(i, a)] * j.lx[i]).sum::<f64>();
    }
    b
}

/// `X^A − y^A` for the `X_A` components of a prolongation vector.
pub fn sode_defect(x_components: &[f64], at: &EPoint) -> Vec<f64> {
    x_components.iter().zip(&at.y).map(|(a, b)| a - b).collect()
}

/// Inverse of the Legendre map by damped Newton iteration started at `seed`.
pub fn legendre_inverse(sys: &LagrangianSystem, x: &[f64], p: &[f64], seed: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let scale = p.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let residual = |y: &[f64]| -> Result<DVector<f64>, DynamicsError> {
        let (_, ly) = sys.fiber_derivative(&EPoint::new(x.to_vec(), y.to_vec()))?;
        Ok(DVector::from_iterator(p.len(), ly.iter().zip(p).map(|(a, b)| a - b)))
    };
    let mut y = seed.to_vec();
    let mut r = residual(&y)?;
    for _ in 0..50 {
        if r.norm() <= 1e-12 * scale {
            return Ok(y);
        }
        let w = sys.jet(&EPoint::new(x.to_vec(), y.clone()))?.w;
        let Some(step) = linalg::lu_solve(&w, &r) else {
            break;
        };
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let rt = residual(&trial)?;
            if rt.norm() < r.norm() || t < 1e-4 {
                y = trial;
                r = rt;
                break;
            }
            t *= 0.5;
        }
    }
    if r.norm() <= 1e-12 * scale {
        return Ok(y);
    }
    Err(DynamicsError::LegendreInverse { iterations: 50, residual: r.norm() })
}

/// `H = E_L ∘ leg⁻¹` for a hyperregular Lagrangian, with exact gradient
/// `∂H/∂p = y`, `∂H/∂x = −∂L/∂x`.
#[derive(Clone, Debug)]
pub struct LegendreHamiltonian {
    sys: LagrangianSystem,
}

impl LegendreHamiltonian {
    pub fn new(sys: LagrangianSystem) -> Self {
        LegendreHamiltonian { sys }
    }

    pub fn velocity(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        legendre_inverse(&self.sys, x, p, p)
    }
}

impl Observable for LegendreHamiltonian {
    fn value_grad(&self, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AlgebroidError> {
        let to_alg = |e: DynamicsError| match e {
            DynamicsError::Algebroid(a) => a,
            other => AlgebroidError::Dimension(other.to_string()),
        };
        let y = self.velocity(x, p).map_err(to_alg)?;
        let at = EPoint::new(x.to_vec(), y.clone());
        let (lx, _) = self.sys.fiber_derivative(&at).map_err(to_alg)?;
        let l = self.sys.value(&at).map_err(to_alg)?;
        let h = p.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - l;
        Ok((h, lx.iter().map(|v| -v).collect(), y))
    }
}

/// Hamilton's equations `(ẋ, ṗ)` for an observable `H`.
pub fn hamilton_rhs(chart: &AlgebroidChart, h: &dyn Observable, at: &DualPoint) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    let (_, hx, hp) = h.value_grad(&at.x, &at.p)?;
    Ok(hamilton_rhs_from_grads(chart, at, &hx, &hp)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_system;

    fn pendulum() -> LagrangianSystem {
        let s = parse_system("system p\nbase [q]\nfiber [e1]\nanchor { e1 -> (1) }\nlagrangian = 0.5*e1^2 - (1 - cos(q))").unwrap();
        LagrangianSystem::new(&s).unwrap()
    }

    #[test]
    fn pendulum_equation() {
        let sys = pendulum();
        let (xd, yd) = euler_lagrange_rhs(&sys, &EPoint::new(vec![0.4], vec![0.9])).unwrap();
        assert_eq!(xd, vec![0.9]);
        assert!((yd[0] + 0.4f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn energy_is_hamiltonian_of_cartan_form() {
        // For a regular L the EL field X solves i_X ω_L = dE_L.
        let s = parse_system("system t\nbase [x, y]\nfiber [e1, e2]\nanchor { e1 -> (1, 0); e2 -> (x, 1) }\nbracket { [e1,e2] = e1 }\nlagrangian = 0.5*(e1^2 + (1 + x^2)*e2^2) + x*e1*e2 - y^2").unwrap();
        let sys = LagrangianSystem::new(&s).unwrap();
        let at = EPoint::new(vec![0.3, -0.2], vec![0.5, 1.1]);
        let cd = cartan(&sys, &at).unwrap();
        let (_, f) = euler_lagrange_rhs(&sys, &at).unwrap();
        let xi = DVector::from_iterator(4, at.y.iter().chain(&f).copied());
        let lhs = cd.omega.transpose() * xi;
        for k in 0..4 {
            assert!((lhs[k] - cd.d_energy[k]).abs() < 1e-12, "{k}: {} vs {}", lhs[k], cd.d_energy[k]);
        }
    }

    #[test]
    fn legendre_inverse_round_trip() {
        let s = parse_system("system t\nbase [x]\nfiber [e1]\nanchor { e1 -> (1) }\nlagrangian = 0.5*e1^2 + 0.1*e1^4 + x*e1").unwrap();
        let sys = LagrangianSystem::new(&s).unwrap();
        let at = EPoint::new(vec![0.3], vec![1.7]);
        let p = legendre(&sys, &at).unwrap();
        let y = legendre_inverse(&sys, &p.x, &p.p, &p.p).unwrap();
        assert!((y[0] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn singular_hessian_reported() {
        let s = parse_system("system t\nbase [x]\nfiber [e1, e2]\nanchor { e1 -> (1); e2 -> (0) }\nlagrangian = 0.5*e1^2 + x*e2").unwrap();
        let sys = LagrangianSystem::new(&s).unwrap();
        let at = EPoint::new(vec![0.0], vec![1.0, 1.0]);
        assert!(!is_regular(&sys, &at).unwrap().regular);
        assert!(matches!(euler_lagrange_rhs(&sys, &at), Err(DynamicsError::SingularHessian { .. })));
    }
}

//! Presymplectic systems on Lie algebroids and the constraint algorithm.
//!
//! A problem is a triple `(Ω, α, ρ)` over a coordinate manifold `Q` of
//! dimension `d`: a 2-section `Ω(z)` and a 1-section `α(z)` of a rank-`r`
//! algebroid, and its anchor `ρ(z): R^r → T_zQ`. We look for sections `X`
//! with `i_X Ω = α` (as matrices, `Ωᵀ X = α`) that are tangent to the
//! final constraint set.
//!
//! Level `k + 1` adds the constraint `G_k(z) = Π_k(z) α(z)`, where `Π_k` is
//! the orthogonal projector onto `(E_k)^⊥` and `E_k = ρ⁻¹(T Q_k)`. Using the
//! projected vector keeps the constraint independent of any basis choice.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::{omega_e_matrix, AlgebroidChart, DualPoint, Observable};
use crate::dynamics::{cartan, el_forcing, EPoint, LagrangianSystem, LegendreHamiltonian};
use crate::expr::{Bindings, CompiledExpr, Expr};
use crate::linalg;
use crate::numdiff;
use crate::Error;

#[derive(Debug, Error)]
pub enum PresymError {
    #[error(transparent)]
    Eval(Box<Error>),
    #[error("constraint algorithm did not stabilize within {max} levels")]
    MaxLevelsExceeded { max: usize },
    #[error("rank decision at level {level} is ambiguous: relative singular values {sigma:?} fall in the band")]
    RankAmbiguous { level: usize, sigma: Vec<f64> },
    #[error("no solution: residual {residual:e}")]
    Inconsistent { residual: f64 },
    #[error("could not reach constraint level {level} from a probe point (residual {residual:e})")]
    ProjectionFailed { level: usize, residual: f64 },
    #[error("point is not on the final constraint set (residual {residual:e})")]
    NotOnFinalManifold { residual: f64 },
    #[error("linear solve residual too large: {residual:e}")]
    LinearSolveResidualTooLarge { residual: f64 },
    #[error("basis is rank deficient")]
    RankDeficientBasis,
}

impl From<Error> for PresymError {
    fn from(e: Error) -> Self {
        PresymError::Eval(Box::new(e))
    }
}

type MatFn = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>, Error> + Send + Sync>;
type VecFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>, Error> + Send + Sync>;

/// `Ω`, `α` and the anchor as functions of the base coordinates.
#[derive(Clone)]
pub struct PresymplecticProblem {
    pub labels: Vec<String>,
    pub rank: usize,
    omega: MatFn,
    alpha: VecFn,
    anchor: MatFn,
}

impl PresymplecticProblem {
    pub fn new(labels: Vec<String>, rank: usize, omega: MatFn, alpha: VecFn, anchor: MatFn) -> Self {
        PresymplecticProblem { labels, rank, omega, alpha, anchor }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn omega(&self, z: &[f64]) -> Result<DMatrix<f64>, Error> {
        (self.omega)(z)
    }

    pub fn alpha(&self, z: &[f64]) -> Result<Vec<f64>, Error> {
        (self.alpha)(z)
    }

    pub fn anchor(&self, z: &[f64]) -> Result<DMatrix<f64>, Error> {
        (self.anchor)(z)
    }

    /// `i_ξ ω_L = dE_L` on the prolongation `T^E E`, coordinates `(x, y)`,
    /// basis `{X_A, V_A}`.
    pub fn lagrangian(sys: &LagrangianSystem, labels: Vec<String>) -> Self {
        let (m, n) = (sys.m(), sys.n());
        let split = move |z: &[f64]| EPoint::new(z[..m].to_vec(), z[m..].to_vec());
        let s1 = sys.clone();
        let omega: MatFn = Arc::new(move |z| Ok(cartan(&s1, &split(z)).map_err(Error::from)?.omega));
        let s2 = sys.clone();
        let alpha: VecFn = Arc::new(move |z| Ok(cartan(&s2, &split(z)).map_err(Error::from)?.d_energy));
        let chart = sys.chart().clone();
        let anchor: MatFn = Arc::new(move |z| {
            let rho = chart.anchor(&z[..m])?;
            let mut a = DMatrix::zeros(m + n, 2 * n);
            a.view_mut((0, 0), (m, n)).copy_from(&rho);
            a.view_mut((m, n), (n, n)).fill_with_identity();
            Ok(a)
        });
        PresymplecticProblem::new(labels, 2 * n, omega, alpha, anchor)
    }

    /// `i_X Ω_E = dH` restricted to a submanifold of the dual bundle given
    /// as a graph over `(x, q)`; `labels` names `x` then `q`. The
    /// prolongation basis is `{Y_A, ∂/∂q}`.
    pub fn hamiltonian_on_graph(chart: &AlgebroidChart, graph: Arc<dyn MomentumGraph>, labels: Vec<String>) -> Self {
        let (m, n) = (chart.m(), chart.n());
        let k = labels.len() - m;
        let r = n + k;
        let c1 = chart.clone();
        let g1 = graph.clone();
        let omega: MatFn = Arc::new(move |z| {
            let (x, q) = (&z[..m], &z[m..]);
            let (p, dpx, dpq) = g1.embed(x, q)?;
            let rho = c1.anchor(x)?;
            // Push the basis forward into {Y_A, P^A} of T^E E*.
            let mut j = DMatrix::zeros(2 * n, r);
            j.view_mut((0, 0), (n, n)).fill_with_identity();
            j.view_mut((n, 0), (n, n)).copy_from(&(&dpx * &rho));
            j.view_mut((n, n), (n, k)).copy_from(&dpq);
            let om = omega_e_matrix(&c1, &DualPoint::new(x.to_vec(), p))?;
            Ok(j.transpose() * om * j)
        });
        let c2 = chart.clone();
        let g2 = graph.clone();
        let alpha: VecFn = Arc::new(move |z| {
            let (x, q) = (&z[..m], &z[m..]);
            let (_, hx, hq) = g2.hamiltonian(x, q)?;
            let rho = c2.anchor(x)?;
            let mut a: Vec<f64> = (0..n).map(|b| (0..m).map(|i| rho[(i, b)] * hx[i]).sum()).collect();
            a.extend(hq);
            Ok(a)
        });
        let c3 = chart.clone();
        let anchor: MatFn = Arc::new(move |z| {
            let rho = c3.anchor(&z[..m])?;
            let mut a = DMatrix::zeros(m + k, r);
            a.view_mut((0, 0), (m, n)).copy_from(&rho);
            a.view_mut((m, n), (k, k)).fill_with_identity();
            Ok(a)
        });
        PresymplecticProblem::new(labels, r, omega, alpha, anchor)
    }
}

/// A submanifold `p = Φ(x, q)` of the dual bundle with a Hamiltonian on it.
pub trait MomentumGraph: Send + Sync {
    /// `Φ(x, q)`, `∂Φ/∂x` (`n × m`) and `∂Φ/∂q` (`n × k`).
    fn embed(&self, x: &[f64], q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>), Error>;
    /// `h(x, q)`, `∂h/∂x`, `∂h/∂q`.
    fn hamiltonian(&self, x: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), Error>;
}

/// A graph given by expressions: momenta not listed in `free` are
/// expressions in `(x, q)`, and `h` is an expression in `(x, q)`.
#[derive(Clone, Debug)]
pub struct ExprGraph {
    m: usize,
    free: Vec<usize>,
    fixed: Vec<Option<CompiledExpr>>,
    h: CompiledExpr,
    params: Vec<f64>,
}

impl ExprGraph {
    /// `fixed` maps momentum index to its expression; `vars` lists base
    /// coordinates, then free momenta, then parameters.
    pub fn new(n: usize, base: &[String], free: Vec<usize>, momenta: &[String], fixed: &BTreeMap<usize, Expr>, h: &Expr, params: &Bindings) -> Result<Self, Error> {
        let mut vars: Vec<&str> = base.iter().map(String::as_str).collect();
        vars.extend(free.iter().map(|a| momenta[*a].as_str()));
        vars.extend(params.keys().map(String::as_str));
        let mut table = vec![None; n];
        for a in 0..n {
            match (fixed.get(&a), free.contains(&a)) {
                (Some(e), false) => table[a] = Some(CompiledExpr::compile(e, &vars)?),
                (None, true) => {}
                _ => return Err(Error::Invalid(format!("momentum {} must be either fixed or free", momenta[a]))),
            }
        }
        Ok(ExprGraph { m: base.len(), free, fixed: table, h: CompiledExpr::compile(h, &vars)?, params: params.values().copied().collect() })
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    fn inputs(&self, x: &[f64], q: &[f64]) -> Vec<f64> {
        x.iter().chain(q).chain(&self.params).copied().collect()
    }
}

impl MomentumGraph for ExprGraph {
    fn embed(&self, x: &[f64], q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>), Error> {
        let (m, n, k) = (self.m, self.fixed.len(), self.free.len());
        let z = self.inputs(x, q);
        let wrt: Vec<usize> = (0..m + k).collect();
        let mut p = vec![0.0; n];
        let mut dx = DMatrix::zeros(n, m);
        let mut dq = DMatrix::zeros(n, k);
        for (j, a) in self.free.iter().enumerate() {
            p[*a] = q[j];
            dq[(*a, j)] = 1.0;
        }
        for (a, e) in self.fixed.iter().enumerate() {
            if let Some(e) = e {
                let (v, g) = e.gradient(&z, &wrt)?;
                p[a] = v;
                for i in 0..m {
                    dx[(a, i)] = g[i];
                }
                for j in 0..k {
                    dq[(a, j)] = g[m + j];
                }
            }
        }
        Ok((p, dx, dq))
    }

    fn hamiltonian(&self, x: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), Error> {
        let m = self.m;
        let wrt: Vec<usize> = (0..m + self.free.len()).collect();
        let (h, g) = self.h.gradient(&self.inputs(x, q), &wrt)?;
        Ok((h, g[..m].to_vec(), g[m..].to_vec()))
    }
}

/// The whole dual bundle with `H = E_L ∘ leg⁻¹`.
#[derive(Clone, Debug)]
pub struct DualGraph {
    h: LegendreHamiltonian,
    n: usize,
}

impl DualGraph {
    pub fn new(sys: &LagrangianSystem) -> Self {
        DualGraph { h: LegendreHamiltonian::new(sys.clone()), n: sys.n() }
    }
}

impl MomentumGraph for DualGraph {
    fn embed(&self, x: &[f64], q: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>), Error> {
        Ok((q.to_vec(), DMatrix::zeros(self.n, x.len()), DMatrix::identity(self.n, self.n)))
    }

    fn hamiltonian(&self, x: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), Error> {
        Ok(self.h.value_grad(x, q)?)
    }
}

/// Kernel of `Ω` as orthonormal columns.
pub fn kernel(omega: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::null_space(omega, linalg::rank_tol())
}

/// `F^⊥ = {e : Ω(e, f) = 0 ∀ f ∈ F}` for `F` spanned by the columns of
/// `f_basis`.
pub fn perp(omega: &DMatrix<f64>, f_basis: &DMatrix<f64>) -> Result<DMatrix<f64>, PresymError> {
    if f_basis.ncols() > 0 && linalg::rank(f_basis, linalg::rank_tol()) < f_basis.ncols() {
        return Err(PresymError::RankDeficientBasis);
    }
    if f_basis.ncols() == 0 {
        return Ok(DMatrix::identity(omega.nrows(), omega.nrows()));
    }
    Ok(linalg::null_space(&(f_basis.transpose() * omega.transpose()), linalg::rank_tol()))
}

/// Norm of `α` projected onto the span of `perp_basis` (orthonormal).
pub fn consistency_residual(alpha: &[f64], perp_basis: &DMatrix<f64>) -> f64 {
    let a = DVector::from_column_slice(alpha);
    (perp_basis.transpose() * a).norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstraintConfig {
    pub max_levels: usize,
    /// Relative singular values strictly between these are ambiguous.
    pub band: (f64, f64),
    pub residual_tol: f64,
    pub fd_step: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig { max_levels: 8, band: (1e-11, 1e-7), residual_tol: 1e-9, fd_step: 1e-3 }
    }
}

/// Summary of one level `Q_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintLevel {
    pub k: usize,
    /// Rank added by the constraints defining `Q_k`.
    pub new_constraint_rank: usize,
    pub total_rank: usize,
    /// `|Π_k α|` at the probes projected onto `Q_k`.
    pub probe_residuals: Vec<f64>,
}

/// Result of the constraint algorithm.
#[derive(Clone)]
pub struct ConstraintRun {
    problem: PresymplecticProblem,
    config: ConstraintConfig,
    pub levels: Vec<ConstraintLevel>,
    pub probes: Vec<Vec<f64>>,
}

impl ConstraintRun {
    pub fn problem(&self) -> &PresymplecticProblem {
        &self.problem
    }

    pub fn final_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "final_level": self.final_level(),
            "dim": self.problem.dim(),
            "rank": self.problem.rank,
            "levels": self.levels,
        })
    }

    fn eng(&self) -> Engine<'_> {
        Engine { p: &self.problem, cfg: &self.config }
    }

    /// Stacked constraint values defining the final set.
    pub fn constraints(&self, z: &[f64]) -> Result<Vec<f64>, PresymError> {
        self.eng().stacked(z, self.final_level())
    }

    pub fn membership_residual(&self, z: &[f64]) -> Result<f64, PresymError> {
        Ok(self.constraints(z)?.iter().fold(0.0f64, |a, v| a.max(v.abs())))
    }

    /// Nearest point of the final set reached by Gauss–Newton from `z`.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>, PresymError> {
        self.eng().project(z, self.final_level())
    }

    /// Basis of `E_f = ρ⁻¹(T Q_f)` at `z`.
    pub fn admissible_fiber(&self, z: &[f64]) -> Result<DMatrix<f64>, PresymError> {
        self.eng().fiber_basis(z, self.final_level())
    }

    /// Jacobian of the final constraints.
    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, PresymError> {
        self.eng().jacobian(z, self.final_level())
    }

    /// Minimum-norm `X ∈ E_f` with `i_X Ω = α`.
    pub fn solve_on_final(&self, z: &[f64]) -> Result<Solution, PresymError> {
        let b = self.admissible_fiber(z)?;
        solve_in(&self.problem, z, &b, self.config.residual_tol)
    }
}

/// A section value solving the dynamical equation at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub residual: f64,
}

fn solve_in(p: &PresymplecticProblem, z: &[f64], basis: &DMatrix<f64>, tol: f64) -> Result<Solution, PresymError> {
    let om = p.omega(z)?;
    let a = DVector::from_vec(p.alpha(z)?);
    let lhs = om.transpose() * basis;
    let (c, _) = linalg::min_norm_solve(&lhs, &a, linalg::rank_tol());
    let x = basis * c;
    let residual = (om.transpose() * &x - &a).norm();
    if residual > tol * a.norm().max(1.0) {
        return Err(PresymError::Inconsistent { residual });
    }
    Ok(Solution { x: x.as_slice().to_vec(), residual })
}

struct Engine<'a> {
    p: &'a PresymplecticProblem,
    cfg: &'a ConstraintConfig,
}

impl Engine<'_> {
    fn stacked(&self, z: &[f64], k: usize) -> Result<Vec<f64>, PresymError> {
        let mut out = Vec::new();
        for j in 0..k {
            out.extend(self.level_constraint(z, j)?);
        }
        Ok(out)
    }

    /// `G_j(z) = Π_j α`.
    fn level_constraint(&self, z: &[f64], j: usize) -> Result<Vec<f64>, PresymError> {
        let basis = self.perp_basis(z, j)?;
        let a = DVector::from_vec(self.p.alpha(z)?);
        Ok((&basis * (basis.transpose() * a)).as_slice().to_vec())
    }

    fn jacobian(&self, z: &[f64], k: usize) -> Result<DMatrix<f64>, PresymError> {
        let d = z.len();
        if k == 0 {
            return Ok(DMatrix::zeros(0, d));
        }
        let cols = numdiff::jacobian5(|w| self.stacked(w, k), z, self.cfg.fd_step)?;
        let rows = cols.first().map_or(0, Vec::len);
        Ok(DMatrix::from_fn(rows, d, |i, j| cols[j][i]))
    }

    fn fiber_basis(&self, z: &[f64], k: usize) -> Result<DMatrix<f64>, PresymError> {
        if k == 0 {
            return Ok(DMatrix::identity(self.p.rank, self.p.rank));
        }
        let j = self.jacobian(z, k)?;
        let a = self.p.anchor(z)?;
        Ok(linalg::null_space(&(j * a), linalg::rank_tol()))
    }

    fn perp_basis(&self, z: &[f64], k: usize) -> Result<DMatrix<f64>, PresymError> {
        let om = self.p.omega(z)?;
        if k == 0 {
            return Ok(kernel(&om));
        }
        perp(&om, &self.fiber_basis(z, k)?)
    }

    fn project(&self, z0: &[f64], k: usize) -> Result<Vec<f64>, PresymError> {
        let mut z = z0.to_vec();
        if k == 0 {
            return Ok(z);
        }
        let norm = |g: &[f64]| g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut g = self.stacked(&z, k)?;
        for _ in 0..50 {
            if norm(&g) <= 1e-13 {
                break;
            }
            let j = self.jacobian(&z, k)?;
            let (step, _) = linalg::min_norm_solve(&j, &DVector::from_column_slice(&g), linalg::rank_tol());
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
            let gt = self.stacked(&trial, k)?;
            if norm(&gt) >= norm(&g) {
                break;
            }
            z = trial;
            g = gt;
        }
        let residual = norm(&g);
        if residual > 1e-10 {
            return Err(PresymError::ProjectionFailed { level: k, residual });
        }
        Ok(z)
    }

    fn rank_at(&self, z: &[f64], k: usize) -> Result<usize, PresymError> {
        let j = self.jacobian(z, k)?;
        if j.nrows() == 0 {
            return Ok(0);
        }
        let b = linalg::banded_rank(&j, self.cfg.band.0, self.cfg.band.1);
        if !b.ambiguous.is_empty() {
            return Err(PresymError::RankAmbiguous { level: k, sigma: b.ambiguous });
        }
        Ok(b.rank)
    }
}

/// Runs the constraint algorithm from the given probe points.
pub fn run_constraint_algorithm(problem: &PresymplecticProblem, seeds: &[Vec<f64>], config: ConstraintConfig) -> Result<ConstraintRun, PresymError> {
    let eng = Engine { p: problem, cfg: &config };
    let mut levels: Vec<ConstraintLevel> = Vec::new();
    let mut probes: Vec<Vec<f64>> = seeds.to_vec();
    let mut prev_rank = 0;
    for k in 0..=config.max_levels {
        if k > 0 {
            probes = probes.iter().map(|z| eng.project(z, k)).collect::<Result<_, _>>()?;
        }
        let mut total = 0;
        for z in &probes {
            total = total.max(eng.rank_at(z, k)?);
        }
        let mut residuals = Vec::with_capacity(probes.len());
        for z in &probes {
            let g = eng.level_constraint(z, k)?;
            residuals.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        let stable = probes
            .iter()
            .zip(&residuals)
            .all(|(z, r)| *r <= config.residual_tol * problem.alpha(z).map(|a| a.iter().fold(1.0f64, |m, v| m.max(v.abs()))).unwrap_or(1.0));
        levels.push(ConstraintLevel { k, new_constraint_rank: total - prev_rank.min(total), total_rank: total, probe_residuals: residuals });
        prev_rank = total;
        if stable {
            return Ok(ConstraintRun { problem: problem.clone(), config, levels, probes });
        }
    }
    Err(PresymError::MaxLevelsExceeded { max: config.max_levels })
}

/// SODE part of the dynamics at a point of the final set, in the basis
/// `{X_A, V_A}`: `ξ = y^A X_A + ξ^A V_A`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SodeResult {
    pub xi_x: Vec<f64>,
    pub xi_v: Vec<f64>,
    /// `max |X^A − y^A|` for the minimum-norm solution `X`.
    pub sode_defect: f64,
    pub residual: f64,
}

/// Extracts the second-order part of the dynamics on `(x, y)`.
pub fn sode_extract(run: &ConstraintRun, sys: &LagrangianSystem, z: &[f64]) -> Result<SodeResult, PresymError> {
    let residual = run.membership_residual(z)?;
    if residual > 1e-9 {
        return Err(PresymError::NotOnFinalManifold { residual });
    }
    let n = sys.n();
    let sol = run.solve_on_final(z)?;
    let defect = sol.x[..n].iter().zip(&z[sys.m()..]).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
    let (xi_v, residual) = sode_acceleration(sys, z)?;
    Ok(SodeResult { xi_x: z[sys.m()..].to_vec(), xi_v, sode_defect: defect, residual })
}

/// Minimum-norm `ξ^V` solving `W ξ^V = −b`, and the solve residual.
pub fn sode_acceleration(sys: &LagrangianSystem, z: &[f64]) -> Result<(Vec<f64>, f64), PresymError> {
    let (m, n) = (sys.m(), sys.n());
    let at = EPoint::new(z[..m].to_vec(), z[m..].to_vec());
    let j = sys.jet(&at).map_err(Error::from)?;
    let rho = sys.chart().anchor(&at.x).map_err(Error::from)?;
    let c = sys.chart().structure(&at.x).map_err(Error::from)?;
    let y = DVector::from_column_slice(&at.y);
    let rhs = -el_forcing(&j, &rho, &c, &y, m, n);
    let (f, _) = linalg::min_norm_solve(&j.w, &rhs, linalg::rank_tol());
    let residual = (&j.w * &f - &rhs).norm();
    if residual > 1e-9 * rhs.norm().max(1.0) {
        return Err(PresymError::LinearSolveResidualTooLarge { residual });
    }
    Ok((f.as_slice().to_vec(), residual))
}

/// The second-order field `(ρ y, ξ^V)` on `(x, y)`.
pub fn sode_rhs(sys: &LagrangianSystem, z: &[f64]) -> Result<Vec<f64>, PresymError> {
    let (m, n) = (sys.m(), sys.n());
    let rho = sys.chart().anchor(&z[..m]).map_err(Error::from)?;
    let mut out: Vec<f64> = (0..m).map(|i| (0..n).map(|a| rho[(i, a)] * z[m + a]).sum()).collect();
    out.extend(sode_acceleration(sys, z)?.0);
    Ok(out)
}

/// Replaces the velocities of a point of the final set by the `X_A`
/// components of the minimum-norm solution, landing on the SODE set.
pub fn project_to_sode(run: &ConstraintRun, sys: &LagrangianSystem, z: &[f64]) -> Result<Vec<f64>, PresymError> {
    let (m, n) = (sys.m(), sys.n());
    let mut w = run.project(z)?;
    for _ in 0..20 {
        let sol = run.solve_on_final(&w)?;
        let defect = sol.x[..n].iter().zip(&w[m..]).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        if defect < 1e-13 {
            break;
        }
        w[m..].copy_from_slice(&sol.x[..n]);
        w = run.project(&w)?;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_of_everything_is_kernel() {
        let mut om = DMatrix::zeros(4, 4);
        om[(0, 1)] = 1.0;
        om[(1, 0)] = -1.0;
        let p = perp(&om, &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(p.ncols(), 2);
        assert_eq!(kernel(&om).ncols(), 2);
    }

    #[test]
    fn rank_deficient_basis_rejected() {
        let om = DMatrix::zeros(2, 2);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(perp(&om, &f), Err(PresymError::RankDeficientBasis)));
    }

    #[test]
    fn regular_problem_stabilizes_immediately() {
        // Harmonic oscillator on T R with the canonical form.
        let omega: MatFn = Arc::new(|_| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])));
        let alpha: VecFn = Arc::new(|z| Ok(vec![z[0], z[1]]));
        let anchor: MatFn = Arc::new(|_| Ok(DMatrix::identity(2, 2)));
        let p = PresymplecticProblem::new(vec!["q".into(), "v".into()], 2, omega, alpha, anchor);
        let run = run_constraint_algorithm(&p, &[vec![0.3, 0.4]], ConstraintConfig::default()).unwrap();
        assert_eq!(run.final_level(), 0);
        let s = run.solve_on_final(&[0.3, 0.4]).unwrap();
        // Ωᵀ X = α gives X = (v, -q)... with Ωᵀ = [[0,-1],[1,0]]: -X2 = q, X1 = v
        assert!((s.x[0] - 0.4).abs() < 1e-15 && (s.x[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_problem_detected() {
        // Ω = 0, α constant and nonzero: no point satisfies the constraint.
        let omega: MatFn = Arc::new(|_| Ok(DMatrix::zeros(1, 1)));
        let alpha: VecFn = Arc::new(|_| Ok(vec![1.0]));
        let anchor: MatFn = Arc::new(|_| Ok(DMatrix::identity(1, 1)));
        let p = PresymplecticProblem::new(vec!["q".into()], 1, omega, alpha, anchor);
        let r = run_constraint_algorithm(&p, &[vec![0.0]], ConstraintConfig::default());
        assert!(matches!(r, Err(PresymError::ProjectionFailed { .. })), "{:?}", r.err());
    }
}

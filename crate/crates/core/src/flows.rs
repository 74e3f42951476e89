//! The four flows as first-order systems ready for integration.

use crate::algebroid::{AlgebroidChart, DualPoint, Observable};
use crate::dynamics::{euler_lagrange_rhs, hamilton_rhs, EPoint, LagrangianSystem};
use crate::expr::SystemSpec;
use crate::odeint::OdeProblem;
use crate::presets::vakonomic_labels;
use crate::presym::sode_rhs;
use crate::vakonomic::VakonomicSystem;
use crate::Error;

/// `x` then velocities, named after the fiber basis.
pub fn tangent_labels(spec: &SystemSpec) -> Vec<String> {
    spec.base.iter().chain(&spec.fiber).cloned().collect()
}

/// `x` then momenta.
pub fn dual_labels(spec: &SystemSpec) -> Vec<String> {
    spec.base.iter().cloned().chain(spec.momenta()).collect()
}

pub fn euler_lagrange<'a>(sys: &'a LagrangianSystem, labels: Vec<String>) -> OdeProblem<'a> {
    let m = sys.m();
    OdeProblem::new(labels, move |_, z| {
        let (xd, yd) = euler_lagrange_rhs(sys, &EPoint::new(z[..m].to_vec(), z[m..].to_vec()))?;
        Ok(xd.into_iter().chain(yd).collect())
    })
}

pub fn hamilton<'a>(chart: &'a AlgebroidChart, h: &'a dyn Observable, labels: Vec<String>) -> OdeProblem<'a> {
    let m = chart.m();
    OdeProblem::new(labels, move |_, z| {
        let (xd, pd) = hamilton_rhs(chart, h, &DualPoint::new(z[..m].to_vec(), z[m..].to_vec()))?;
        Ok(xd.into_iter().chain(pd).collect())
    })
}

pub fn vakonomic<'a>(sys: &'a VakonomicSystem, spec: &SystemSpec) -> OdeProblem<'a> {
    OdeProblem::new(vakonomic_labels(spec), move |_, z| Ok(sys.vakonomic_rhs(&sys.split(z))?))
}

/// The minimum-norm second-order field on the final constraint set.
pub fn sode<'a>(sys: &'a LagrangianSystem, labels: Vec<String>) -> OdeProblem<'a> {
    OdeProblem::new(labels, move |_, z| sode_rhs(sys, z).map_err(Error::from))
}

use thiserror::Error;

use crate::algebroid::AlgebroidError;
use crate::dynamics::DynamicsError;
use crate::expr::{EvalError, ParseError};
use crate::odeint::OdeError;
use crate::presets::PresetError;
use crate::presym::PresymError;
use crate::vakonomic::VakonomicError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Algebroid(#[from] AlgebroidError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Presym(#[from] PresymError),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Vakonomic(#[from] VakonomicError),
    #[error("{0}")]
    Invalid(String),
}

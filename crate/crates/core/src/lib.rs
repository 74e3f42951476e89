pub mod algebroid;
pub mod cli;
pub mod dynamics;
mod error;
pub mod expr;
pub mod flows;
pub mod linalg;
pub mod monitors;
pub mod numdiff;
pub mod odeint;
pub mod presets;
pub mod presym;
pub mod vakonomic;

pub use error::Error;

pub mod dynamics;
pub mod cli;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod io;
pub mod laplacian;
pub mod linalg;
pub mod metric;
pub mod nonholonomic;
pub mod ode;
pub mod solve;
pub mod systems;

pub use error::{Error, Result};
pub use systems::{make_system, System};

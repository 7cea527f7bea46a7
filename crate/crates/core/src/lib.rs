//! Data-driven feedback linearization of single-input control-affine
//! systems: excitation data, observable dictionaries, least-squares and
//! gradient fits of the linearizing transformation, geometric checks and
//! closed-loop evaluation.

pub mod cli;
pub mod control;
pub mod dictionary;
pub mod error;
pub mod geomverify;
pub mod solvers;
pub mod systems;
pub mod util;

pub use error::{Error, Result};

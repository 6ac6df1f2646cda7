pub mod cli;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod propagator;
pub mod pulse_shapes;
pub mod spin_model;

pub use error::{Error, Result};

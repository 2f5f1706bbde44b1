pub mod error;
pub mod estimate;
pub mod fixtures;
pub mod force;
pub mod behavior;
pub mod ggc;
pub mod io;
pub mod pipeline;
pub mod signal;
pub mod sim;
pub mod stats;
pub mod surrogate;
pub mod svg;
pub mod var;

pub use error::{Error, Result};

pub mod autodiff;
pub mod cli;
pub mod cells;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod param;
pub mod tasks;

pub use error::{Error, Result};

pub mod classical;
pub mod config;
pub mod determinantal;
pub mod error;
pub mod experiments;
pub mod multicut;
pub mod output;
pub mod potential;
pub mod quadrature;
pub mod reference;
pub mod sampling;
pub mod schrodinger;
pub mod test_function;
pub mod tridiag;

pub use error::{Error, Result};

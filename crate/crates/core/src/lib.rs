pub mod circuit;
pub mod comb;
pub mod error;
pub mod reduction;
pub mod rep;
pub mod serde_cmatrix;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};

pub mod benchmark;
pub mod compress;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
mod fsutil;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{QeError, Result};
pub use fsutil::write_atomic;

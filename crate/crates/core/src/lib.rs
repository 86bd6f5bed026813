pub mod backbone;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod refine;
pub mod scorer;
pub mod train;

pub use error::{Error, ErrorKind, Result};

//! File formats, datasets, training, evaluation and the command line for
//! the LUMEN pipeline. The numerical core lives in `lumen_core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod io;
pub mod train;

pub use error::{Error, Result};

pub mod analysis;
pub mod error;
pub mod grad;
pub mod io;
pub mod matcore;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};

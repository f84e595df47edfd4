pub mod banded;
pub mod error;
pub mod evolution;
pub mod holder_reg;
pub mod io;
pub mod noise;
pub mod spatial;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod rng;
pub mod shiftdata;
pub mod tensor;
pub mod trainer;

pub use error::{Error, FormatError, Result};
pub use rng::{Rng, Stream};
pub use tensor::Tensor;

/// Crate version plus the git revision it was built from.
pub const VERSION: &str = env!("DRSSL_VERSION");

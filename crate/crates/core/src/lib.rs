pub mod abx;
pub mod error;
pub mod interpret;
pub mod merge;
pub mod io;
pub mod quantizer;
pub mod redundancy;
pub mod rng;
pub mod synthetic;
pub mod types;
pub mod vocoder;
pub mod viz;

pub use error::{Error, Result};
pub use types::*;

pub mod capgen;
pub mod capnet;
pub mod cli;
pub mod datapipe;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod vulnscan;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Precision, Real, Tensor};

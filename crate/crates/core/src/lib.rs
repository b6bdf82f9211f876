pub mod autodiff;
pub mod digest;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod nn;
pub mod pos_encoding;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use grid::TokenGrid;
pub use rng::Seed;
pub use tensor::{Float, Precision, Tensor};

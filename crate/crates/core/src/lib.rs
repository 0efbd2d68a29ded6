pub mod contrast;
pub mod error;
pub mod harness;
pub mod model;
pub mod params;
pub mod rpm;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};

pub mod autodiff;
pub mod benchmarks;
pub mod cells;
pub mod drqn;
pub mod error;
pub mod network;
pub mod par;
pub mod sequences;
pub mod tensor;
pub mod tmaze;
pub mod trainer;
pub mod vaa;
pub mod warmup;

pub use error::{Error, Result};
pub use tensor::Tensor;

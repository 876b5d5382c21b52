pub mod autograd;
pub mod data;
pub mod error;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod resample;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

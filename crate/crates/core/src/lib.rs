pub mod error;
pub mod excite;
pub mod features;
pub mod fit;
pub mod losses;
pub mod melcodec;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

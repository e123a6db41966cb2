pub mod codebooks;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod sensing;
pub mod serde_ext;

pub use error::{Error, Result};

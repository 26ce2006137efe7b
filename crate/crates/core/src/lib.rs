pub mod conditioning;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod nn;
pub mod par;
pub mod privacy;
pub mod serde_f64;
pub mod transform;

pub use error::{Error, Result};

pub mod audit;
pub mod detect;
pub mod error;
pub mod features;
pub mod linalg;
pub mod synth;
pub mod trace;

pub use error::{CrmError, Result};

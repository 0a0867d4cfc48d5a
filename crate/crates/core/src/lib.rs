pub mod attacks;
pub mod defenses;
pub mod error;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod similarity;
pub mod sim;

pub use error::{Error, Result};

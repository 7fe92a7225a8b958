pub mod audit;
pub mod binary;
pub mod domain;
pub mod error;
pub mod lp;
pub mod multiclass;
pub mod scalar;
pub mod unfairness;

pub use domain::*;
pub use error::{Error, Result};

//! Roast-degree classification of coffee-bean photos: preprocessing,
//! datasets, the classifier and its evaluation.

pub mod class;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod model;

pub use class::RoastClass;
pub use error::{Error, Result};

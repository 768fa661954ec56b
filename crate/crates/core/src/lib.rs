pub mod catalog;
pub mod classify;
pub mod curvature;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod jet;
pub mod metric;
pub mod sampling;
pub mod systems;

pub use error::{Error, Result};

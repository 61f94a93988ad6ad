pub mod error;
pub mod roots;
pub mod monte_carlo;
pub mod optimizer;
pub mod performance;
pub mod regression;
pub mod special;
pub mod spline;
pub mod theory_bounds;

pub use error::{KgError, Result};

//! Angle-partitioned social and physical interaction representations for
//! pedestrian trajectory prediction, a small trainable predictor, best-of-K
//! evaluation and a counterfactual intervention engine.

pub mod causal;
pub mod circle;
pub mod eval;
pub mod geometry;
pub mod predictor;
pub mod rng;
pub mod segmap;
pub mod trajdata;

pub use geometry::Vec2;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

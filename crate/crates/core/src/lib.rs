pub mod convergence;
pub mod error;
pub mod eval;
pub mod export;
pub mod filter;
pub mod floorplan;
pub mod geometry;
pub mod heatmap;
pub mod kernel;
pub mod odometry;
pub mod scan;
pub mod synth;

pub use error::{Error, Result};

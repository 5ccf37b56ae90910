pub mod camera;
pub mod config;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod network;
pub mod raster;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

//! Dynamic Gaussian splatting for ambient scenes.

pub mod config;
pub mod error;
pub mod io;
pub mod losses;
pub mod math;
pub mod motion;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod train;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use scene::{Camera, Dataset, DepthMap, Frame, GaussianSet, Image};

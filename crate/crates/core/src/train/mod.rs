//! Static reconstruction followed by deformation training.

mod adam;
mod densify;
mod dynamic;
mod static_stage;

pub use adam::{Adam, GaussianOptimizer, LearningRates};
pub use densify::{densify, prune_by_mask, reset_opacity, DensifyReport, DensifyStats};
pub use dynamic::{train_dynamic, train_dynamic_from, two_pass_step, DynamicResult, FieldOptimizer, StepOutput};
pub use static_stage::{train_static, train_static_from, StaticResult};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::Camera;

/// Uniform sampling without replacement within each pass over the frames.
///
/// The frame for an iteration depends only on the seed, the stream and the
/// iteration number, so a resumed run draws the same frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSampler {
    pub frames: usize,
    pub seed: u64,
    pub stream: u64,
}

impl FrameSampler {
    pub fn new(frames: usize, seed: u64, stream: u64) -> Self {
        Self { frames, seed, stream }
    }

    /// Frame index for 1-based `iteration`.
    pub fn frame_at(&self, iteration: usize) -> usize {
        let k = iteration.saturating_sub(1);
        let epoch = (k / self.frames) as u64;
        let mut order: Vec<usize> = (0..self.frames).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream.wrapping_mul(1 << 32) ^ epoch);
        order.shuffle(&mut rng);
        order[k % self.frames]
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogRow {
    pub stage: &'static str,
    pub iteration: usize,
    pub loss: f64,
    pub photometric: f64,
    pub depth: f64,
    pub mask: f64,
    pub rigidity: f64,
    pub rotation: f64,
    pub gaussians: usize,
    pub probe_psnr: f64,
}

pub const LOG_HEADER: &str = "stage,iteration,loss,photometric,depth,mask,rigidity,rotation,gaussians,probe_psnr";

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.stage, r.iteration, r.loss, r.photometric, r.depth, r.mask, r.rigidity, r.rotation, r.gaussians, r.probe_psnr
        );
    }
    s
}

pub fn write_log(rows: &[LogRow], path: &Path) -> Result<()> {
    std::fs::write(path, log_to_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Radius of the camera centers around their centroid, padded by 10%.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = cameras.iter().map(Camera::center).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if r > 1e-6 {
        r
    } else {
        1.0
    }
}

pub(crate) fn non_finite(iteration: usize, what: &str, value: f64) -> Error {
    Error::NonFiniteLoss {
        iteration,
        detail: format!("{what} = {value}"),
    }
}

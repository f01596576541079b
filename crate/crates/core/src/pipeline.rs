//! End-to-end reconstruction and held-out evaluation.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{NormalizationSource, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{psnr, ssim_metric};
use crate::math::vec3f;
use crate::motion::{fit_normalizer, MotionField, SceneNormalizer};
use crate::raster::render;
use crate::scene::{init_from_points, Camera, Dataset, GaussianSet, Image};
use crate::train::{train_dynamic, train_static, DynamicResult, StaticResult};

/// Untrained motion field for `set`, normalized as `config.normalization` asks.
pub fn initial_field(dataset: &Dataset, set: &GaussianSet, config: &TrainConfig) -> Result<MotionField> {
    let normalizer = match config.normalization {
        NormalizationSource::Cameras => fit_normalizer(&dataset.cameras, config.normalizer_margin)?,
        NormalizationSource::Points => {
            let pts: Vec<Vector3<f64>> = set.positions.iter().map(vec3f).collect();
            SceneNormalizer::from_points(&pts, config.normalizer_margin)?
        }
    };
    MotionField::new(config, normalizer, dataset.total_frames, set.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub static_stage: StaticResult,
    pub dynamic: DynamicResult,
}

/// Point-cloud init, static stage, then deformation training.
pub fn reconstruct(dataset: &Dataset, config: &TrainConfig) -> Result<Reconstruction> {
    let set = init_from_points(&dataset.init_points, &dataset.init_colors, config)?;
    let static_stage = train_static(dataset, set, config)?;
    let field = initial_field(dataset, &static_stage.set, config)?;
    let dynamic = train_dynamic(dataset, static_stage.set.clone(), field, config)?;
    Ok(Reconstruction { static_stage, dynamic })
}

/// Color render at real-valued time `t`, clamped to `[0, 1]`. A missing field
/// renders the canonical set.
pub fn render_frame(set: &GaussianSet, field: Option<&MotionField>, camera: &Camera, t: f64, background: [f64; 3]) -> Image {
    let overrides = field.map(|f| f.deform(set, t).apply(set));
    let mut img = render(set, camera, overrides.as_ref(), background).image();
    img.clamp01();
    img
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub time: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl Metrics {
    pub fn from_frames(frames: Vec<FrameMetrics>) -> Self {
        let n = frames.len().max(1) as f64;
        Self {
            mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
            mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
            frames,
        }
    }
}

/// Scores 8-bit renders against every frame of `dataset`.
pub fn evaluate(set: &GaussianSet, field: Option<&MotionField>, dataset: &Dataset, background: [f64; 3]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    let frames = dataset
        .frames
        .par_iter()
        .zip(&dataset.cameras)
        .enumerate()
        .map(|(i, (frame, camera))| {
            let mut img = render_frame(set, field, camera, frame.time_index as f64, background);
            img.quantize8();
            Ok(FrameMetrics {
                frame: i,
                time: frame.time_index,
                psnr: psnr(&img, &frame.image)?,
                ssim: ssim_metric(&img, &frame.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_frames(frames))
}

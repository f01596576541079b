//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryMode {
    /// Low-frequency cosine basis shared across time.
    Dct,
    /// One free offset per training frame; no temporal basis.
    PerFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientSource {
    /// Triplane encoder followed by the coefficient network.
    Network,
    /// Coefficients stored directly per Gaussian.
    PerGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationSource {
    /// Box spanned by the camera centers, outside points clamped to its boundary.
    Cameras,
    /// Box spanned by the canonical Gaussian positions.
    Points,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub sh_degree: u8,
    pub background: [f64; 3],

    pub static_iters: usize,
    pub densify_until: usize,
    pub dynamic_iters: usize,
    pub chunk_size: usize,
    pub k_fraction: f64,

    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub lambda_mask: f64,
    pub lambda_rigid: f64,
    pub lambda_rot: f64,

    pub densify_from: usize,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    /// Fraction of the scene extent above which a Gaussian is split rather than cloned.
    pub split_size_fraction: f64,
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
    pub prune_interval: usize,
    pub prune_threshold: f64,

    pub lr_position: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_color: f64,
    pub lr_mask: f64,
    pub lr_planes: f64,
    pub lr_net: f64,
    /// Multiplier on Gaussian learning rates during the dynamic stage.
    pub dynamic_lr_scale: f64,
    pub train_colors: bool,

    pub k_nn: usize,
    /// `λw` in the neighbor weights `exp(-λw‖Δμ‖²)`, per squared scene unit.
    pub rigid_falloff: f64,

    pub triplane_resolution: usize,
    pub triplane_channels: usize,
    pub hidden_width: usize,
    pub normalizer_margin: f64,

    pub trajectory: TrajectoryMode,
    pub coefficients: CoefficientSource,
    pub normalization: NormalizationSource,

    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sh_degree: 0,
            background: [0.0; 3],
            static_iters: 80_000,
            densify_until: 9_000,
            dynamic_iters: 30_000,
            chunk_size: 500_000,
            k_fraction: 0.25,
            lambda_ssim: 0.2,
            lambda_depth: 0.05,
            lambda_mask: 5e-4,
            lambda_rigid: 1.0,
            lambda_rot: 1.0,
            densify_from: 500,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            split_size_fraction: 0.01,
            opacity_reset_interval: 3_000,
            opacity_reset_value: 0.05,
            prune_interval: 500,
            prune_threshold: 0.01,
            lr_position: 1.6e-4,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_color: 2.5e-3,
            lr_mask: 1e-2,
            lr_planes: 1e-2,
            lr_net: 1e-3,
            dynamic_lr_scale: 0.1,
            train_colors: false,
            k_nn: 8,
            rigid_falloff: 2000.0,
            triplane_resolution: 128,
            triplane_channels: 16,
            hidden_width: 64,
            normalizer_margin: 1.05,
            trajectory: TrajectoryMode::Dct,
            coefficients: CoefficientSource::Network,
            normalization: NormalizationSource::Cameras,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    /// Schedule for the small synthetic scenes: 2k static and 2k dynamic iterations.
    pub fn desk() -> Self {
        Self {
            static_iters: 2_000,
            densify_until: 500,
            dynamic_iters: 2_000,
            densify_from: 200,
            ..Self::default()
        }
    }

    /// Number of DCT basis functions for a capture of `total_frames`.
    pub fn basis_size(&self, total_frames: usize) -> usize {
        ((total_frames as f64 * self.k_fraction).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size < 1 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::Config("k_fraction must lie in (0, 1]".into()));
        }
        if self.sh_degree > 1 {
            return Err(Error::Config("sh_degree must be 0 or 1".into()));
        }
        if self.triplane_resolution < 1 || self.triplane_channels < 1 || self.hidden_width < 1 {
            return Err(Error::Config("motion field sizes must be positive".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown keys are an error. On error `self` is left unchanged.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut next = self.clone();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            next.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for {key}")))
        }
        fn choice<T: for<'de> Deserialize<'de>>(key: &str, v: &str) -> Result<T> {
            serde_json::from_value(serde_json::Value::String(v.to_string()))
                .map_err(|_| Error::Config(format!("bad value `{v}` for {key}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "sh_degree" => self.sh_degree = num(key, value)?,
            "background" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| num::<f64>(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.background = parts
                    .try_into()
                    .map_err(|_| Error::Config("background needs three components".into()))?;
            }
            "static_iters" => self.static_iters = num(key, value)?,
            "densify_until" => self.densify_until = num(key, value)?,
            "dynamic_iters" => self.dynamic_iters = num(key, value)?,
            "chunk_size" => self.chunk_size = num(key, value)?,
            "k_fraction" => self.k_fraction = num(key, value)?,
            "lambda_ssim" => self.lambda_ssim = num(key, value)?,
            "lambda_depth" => self.lambda_depth = num(key, value)?,
            "lambda_mask" => self.lambda_mask = num(key, value)?,
            "lambda_rigid" => self.lambda_rigid = num(key, value)?,
            "lambda_rot" => self.lambda_rot = num(key, value)?,
            "densify_from" => self.densify_from = num(key, value)?,
            "densify_interval" => self.densify_interval = num(key, value)?,
            "densify_grad_threshold" => self.densify_grad_threshold = num(key, value)?,
            "split_size_fraction" => self.split_size_fraction = num(key, value)?,
            "opacity_reset_interval" => self.opacity_reset_interval = num(key, value)?,
            "opacity_reset_value" => self.opacity_reset_value = num(key, value)?,
            "prune_interval" => self.prune_interval = num(key, value)?,
            "prune_threshold" => self.prune_threshold = num(key, value)?,
            "lr_position" => self.lr_position = num(key, value)?,
            "lr_rotation" => self.lr_rotation = num(key, value)?,
            "lr_opacity" => self.lr_opacity = num(key, value)?,
            "lr_scale" => self.lr_scale = num(key, value)?,
            "lr_color" => self.lr_color = num(key, value)?,
            "lr_mask" => self.lr_mask = num(key, value)?,
            "lr_planes" => self.lr_planes = num(key, value)?,
            "lr_net" => self.lr_net = num(key, value)?,
            "dynamic_lr_scale" => self.dynamic_lr_scale = num(key, value)?,
            "train_colors" => self.train_colors = num(key, value)?,
            "k_nn" => self.k_nn = num(key, value)?,
            "rigid_falloff" => self.rigid_falloff = num(key, value)?,
            "triplane_resolution" => self.triplane_resolution = num(key, value)?,
            "triplane_channels" => self.triplane_channels = num(key, value)?,
            "hidden_width" => self.hidden_width = num(key, value)?,
            "normalizer_margin" => self.normalizer_margin = num(key, value)?,
            "trajectory" => self.trajectory = choice(key, value)?,
            "coefficients" => self.coefficients = choice(key, value)?,
            "normalization" => self.normalization = choice(key, value)?,
            "log_interval" => self.log_interval = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Renders the config back to `key = value` text that `apply_text` accepts.
    pub fn to_text(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in json.as_object().expect("config is an object") {
            let value = match v {
                serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k} = {value}");
        }
        out
    }
}

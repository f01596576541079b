//! Persistent scene types: the optimizable Gaussian set, cameras, frames and datasets.

use nalgebra::{Matrix3, Vector3};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::math::{self, logit, quat_normalize, quat_to_mat, quatf, vec3f, SH_C0};

/// Scale assigned when a point cloud has a single point and no neighbors.
const LONE_POINT_SCALE: f64 = 0.1;
const MIN_NEIGHBOR_DISTANCE: f64 = 1e-7;

pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_MASK: f64 = 0.99;

/// Number of spherical-harmonic coefficients per channel for `degree`.
pub fn sh_coeffs(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

/// The optimizable scene.
///
/// Parameters are stored raw and activated on use: `exp` for scales, the
/// logistic map for opacity and mask, normalization for the quaternion.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    pub sh_degree: u8,
    pub positions: Vec<[f32; 3]>,
    /// `[w, x, y, z]`, not necessarily unit length.
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<[f32; 3]>,
    pub opacity_logits: Vec<f32>,
    /// Row-major `N × B × 3` spherical-harmonic coefficients.
    pub colors: Vec<f32>,
    pub mask_logits: Vec<f32>,
}

impl GaussianSet {
    pub fn empty(sh_degree: u8) -> Self {
        Self {
            sh_degree,
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            colors: Vec::new(),
            mask_logits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Coefficients per channel.
    pub fn sh_coeffs(&self) -> usize {
        sh_coeffs(self.sh_degree)
    }

    /// Floats of color data per Gaussian.
    pub fn color_stride(&self) -> usize {
        3 * self.sh_coeffs()
    }

    pub fn sh(&self, i: usize) -> &[f32] {
        let s = self.color_stride();
        &self.colors[i * s..(i + 1) * s]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.color_stride();
        &mut self.colors[i * s..(i + 1) * s]
    }

    /// Checks that every array shares the leading dimension.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.rotations.len() == n
            && self.log_scales.len() == n
            && self.opacity_logits.len() == n
            && self.mask_logits.len() == n
            && self.colors.len() == n * self.color_stride();
        if !ok {
            return Err(Error::ShapeMismatch("gaussian arrays disagree on count".into()));
        }
        if self.sh_degree > 1 {
            return Err(Error::InvalidInput(format!("sh degree {} > 1", self.sh_degree)));
        }
        Ok(())
    }

    pub fn push(&mut self, other: &GaussianSet, i: usize) {
        self.positions.push(other.positions[i]);
        self.rotations.push(other.rotations[i]);
        self.log_scales.push(other.log_scales[i]);
        self.opacity_logits.push(other.opacity_logits[i]);
        self.colors.extend_from_slice(other.sh(i));
        self.mask_logits.push(other.mask_logits[i]);
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.color_stride();
        let mut it = keep.iter();
        self.positions.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.rotations.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.log_scales.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacity_logits.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.mask_logits.retain(|_| *it.next().unwrap());
        let colors = std::mem::take(&mut self.colors);
        self.colors = colors
            .chunks(stride)
            .zip(keep)
            .filter(|(_, &k)| k)
            .flat_map(|(c, _)| c.iter().copied())
            .collect();
    }

    pub fn unit_rotation(&self, i: usize) -> math::Quat {
        quat_normalize(&quatf(&self.rotations[i]))
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        vec3f(&self.positions[i])
    }

    pub fn scales(&self, i: usize) -> Vector3<f64> {
        vec3f(&self.log_scales[i]).map(f64::exp)
    }

    /// `Σ = R S Sᵀ Rᵀ` for Gaussian `i`.
    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(covariance_from(&self.unit_rotation(i), &self.scales(i)))
    }

    /// Unnormalized Gaussian `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
    pub fn gaussian_density(&self, i: usize, x: &Vector3<f64>) -> Result<f64> {
        let sigma = self.covariance(i)?;
        let d = x - self.position(i);
        // Σ⁻¹ = R S⁻² Rᵀ, avoiding a general inverse.
        let r = quat_to_mat(&self.unit_rotation(i));
        let local = r.transpose() * d;
        let s = self.scales(i);
        let m = (local.x / s.x).powi(2) + (local.y / s.y).powi(2) + (local.z / s.z).powi(2);
        debug_assert!(sigma.determinant() > 0.0);
        Ok((-0.5 * m).exp())
    }
}

pub fn covariance_from(unit_q: &math::Quat, scales: &Vector3<f64>) -> Matrix3<f64> {
    let m = quat_to_mat(unit_q) * Matrix3::from_diagonal(scales);
    m * m.transpose()
}

/// Initializes one isotropic Gaussian per point.
///
/// Scale is the mean distance to the three nearest other points (all
/// available neighbors when fewer than four points are given).
pub fn init_from_points(points: &[[f64; 3]], colors: &[[f64; 3]], config: &TrainConfig) -> Result<GaussianSet> {
    if points.is_empty() {
        return Err(Error::EmptyInitialization);
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} colors",
            points.len(),
            colors.len()
        )));
    }
    if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidInput("colors must lie in [0, 1]".into()));
    }

    let degree = config.sh_degree;
    let b = sh_coeffs(degree);
    let mut set = GaussianSet::empty(degree);
    let scales = nearest_neighbor_scales(points);
    let opacity = logit(INIT_OPACITY) as f32;
    let mask = logit(INIT_MASK) as f32;
    for ((p, c), s) in points.iter().zip(colors).zip(scales) {
        set.positions.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        set.rotations.push([1.0, 0.0, 0.0, 0.0]);
        let ls = s.ln() as f32;
        set.log_scales.push([ls; 3]);
        set.opacity_logits.push(opacity);
        set.mask_logits.push(mask);
        let mut coeffs = vec![0.0f32; 3 * b];
        for ch in 0..3 {
            coeffs[ch] = ((c[ch] - 0.5) / SH_C0) as f32;
        }
        set.colors.extend_from_slice(&coeffs);
    }
    Ok(set)
}

fn nearest_neighbor_scales(points: &[[f64; 3]]) -> Vec<f64> {
    let n = points.len();
    if n == 1 {
        return vec![LONE_POINT_SCALE];
    }
    let k = 3.min(n - 1);
    (0..n)
        .map(|i| {
            let pi = math::vec3(&points[i]);
            let mut best = [f64::INFINITY; 3];
            for (j, pj) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = (math::vec3(pj) - pi).norm();
                if d < best[k - 1] {
                    let mut slot = k - 1;
                    while slot > 0 && best[slot - 1] > d {
                        best[slot] = best[slot - 1];
                        slot -= 1;
                    }
                    best[slot] = d;
                }
            }
            let mean = best[..k].iter().sum::<f64>() / k as f64;
            mean.max(MIN_NEIGHBOR_DISTANCE)
        })
        .collect()
}

/// Pinhole camera with a world-to-camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation_w2c: Matrix3<f64>,
    pub translation_w2c: Vector3<f64>,
    pub time_index: usize,
}

impl Camera {
    /// Camera looking from `eye` toward `target` with `up` roughly vertical.
    /// Camera axes: x right, y down, z forward.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        time_index: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation_w2c: rotation,
            translation_w2c: -(rotation * eye),
            time_index,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_w2c.transpose() * self.translation_w2c)
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        let r = &self.rotation_w2c;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > tolerance || (det - 1.0).abs() > tolerance {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (|RRᵀ-I| = {ortho:.3e}, det = {det:.6})"
            )));
        }
        Ok(())
    }
}

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantize8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

/// Single-channel depth map; zero (or non-positive) marks an undefined pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&d| d > 0.0 && d.is_finite()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub depth: Option<DepthMap>,
    pub time_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub cameras: Vec<Camera>,
    pub init_points: Vec<[f64; 3]>,
    pub init_colors: Vec<[f64; 3]>,
    /// Total frame count of the capture the frames were drawn from.
    pub total_frames: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.cameras.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames but {} cameras",
                self.frames.len(),
                self.cameras.len()
            )));
        }
        if self.init_points.len() != self.init_colors.len() {
            return Err(Error::ShapeMismatch("init points and colors disagree".into()));
        }
        for (f, c) in self.frames.iter().zip(&self.cameras) {
            if f.time_index >= self.total_frames || c.time_index != f.time_index {
                return Err(Error::InvalidInput(format!(
                    "time index {} outside [0, {}) or camera mismatch",
                    f.time_index, self.total_frames
                )));
            }
        }
        Ok(())
    }

    /// Frames at `indices`, in that order, sharing the point cloud.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            cameras: indices.iter().map(|&i| self.cameras[i].clone()).collect(),
            init_points: self.init_points.clone(),
            init_colors: self.init_colors.clone(),
            total_frames: self.total_frames,
        }
    }
}

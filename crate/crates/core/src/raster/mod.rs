//! Differentiable splatting of a [`GaussianSet`] into color, depth and alpha images.
//!
//! Pixel `(x, y)` samples the image plane at `(x, y)` in pixel units, so a point
//! projecting to `(cx, cy)` lands exactly on the pixel at the principal point.

mod backward;
mod forward;
mod project;
mod reference;

pub use backward::{render_backward, Gradients};
pub use forward::{render, TILE_SIZE};
pub use project::{project, Projected2D};
pub use reference::render_reference;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::math::{quatf, sigmoid, vec3f, Quat, SH_C0, SH_C1};
use crate::scene::{Camera, GaussianSet};

/// Camera-space depth below which a Gaussian is culled.
pub const NEAR_CLIP: f64 = 0.01;
/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
/// Squared Mahalanobis radius beyond which a Gaussian does not touch a pixel (3σ).
pub const MAX_MAHALANOBIS_SQ: f64 = 9.0;
/// Per-pixel opacities below this are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Mask gate threshold applied in the forward pass.
pub const MASK_GATE: f64 = 0.01;

/// Per-Gaussian position and raw rotation that replace the stored values.
#[derive(Clone, Debug, PartialEq)]
pub struct Overrides {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<Quat>,
}

impl Overrides {
    /// The stored canonical values, widened to `f64`.
    pub fn from_set(set: &GaussianSet) -> Self {
        Self {
            positions: set.positions.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect(),
            rotations: set.rotations.iter().map(quatf).collect(),
        }
    }
}

/// One recorded compositing term of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub index: u32,
    pub alpha: f64,
}

/// Per-pixel ordered contributor lists in CSR form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Contributors {
    pub offsets: Vec<usize>,
    pub entries: Vec<Contribution>,
}

impl Contributors {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Sorted unique Gaussian indices that contributed to any pixel.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = self.entries.iter().map(|c| c.index as usize).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H × W × 3`.
    pub color: Vec<f64>,
    /// `H × W`, alpha-weighted camera depth.
    pub depth: Vec<f64>,
    /// `H × W`, accumulated opacity `1 - T_final`.
    pub alpha: Vec<f64>,
    pub contributors: Contributors,
    pub background: [f64; 3],
}

impl RenderOutput {
    pub fn image(&self) -> crate::scene::Image {
        crate::scene::Image {
            width: self.width,
            height: self.height,
            data: self.color.clone(),
        }
    }
}

/// Everything the compositor needs about one Gaussian in one view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub mean: Vector2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub radius: i64,
    pub valid: bool,
}

impl Splat {
    #[inline]
    pub fn mahalanobis_sq(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Position and unit rotation used to render Gaussian `i`.
pub(crate) fn pose_of(set: &GaussianSet, overrides: Option<&Overrides>, i: usize) -> (Vector3<f64>, Quat, Quat) {
    match overrides {
        Some(o) => {
            let raw = o.rotations[i];
            (Vector3::from(o.positions[i]), crate::math::quat_normalize(&raw), raw)
        }
        None => {
            let raw = quatf(&set.rotations[i]);
            (vec3f(&set.positions[i]), crate::math::quat_normalize(&raw), raw)
        }
    }
}

/// Forward-pass opacity multiplier of the mask gate.
#[inline]
pub(crate) fn mask_gate(mask_logit: f32) -> f64 {
    if sigmoid(mask_logit as f64) >= MASK_GATE {
        1.0
    } else {
        0.0
    }
}

/// Evaluates degree-0/1 spherical harmonics along the unit view direction `dir`.
pub(crate) fn sh_color(sh: &[f32], degree: u8, dir: &Vector3<f64>) -> Vector3<f64> {
    let mut c = Vector3::new(
        SH_C0 * sh[0] as f64 + 0.5,
        SH_C0 * sh[1] as f64 + 0.5,
        SH_C0 * sh[2] as f64 + 0.5,
    );
    if degree >= 1 {
        for ch in 0..3 {
            c[ch] += -SH_C1 * dir.y * sh[3 + ch] as f64 + SH_C1 * dir.z * sh[6 + ch] as f64
                - SH_C1 * dir.x * sh[9 + ch] as f64;
        }
    }
    c
}

pub(crate) fn inverse_2x2(cov: &Matrix2<f64>) -> [f64; 3] {
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det]
}

/// Builds the per-view splats for every Gaussian.
pub(crate) fn prepare(set: &GaussianSet, camera: &Camera, overrides: Option<&Overrides>) -> Vec<Splat> {
    let projected = project::project_with(set, camera, overrides);
    let cam_center = camera.center();
    (0..set.len())
        .map(|i| {
            let (pos, _, _) = pose_of(set, overrides, i);
            let dir = (pos - cam_center).normalize();
            let cov = projected.cov_matrix(i);
            Splat {
                mean: Vector2::new(projected.mean2d[i][0], projected.mean2d[i][1]),
                conic: inverse_2x2(&cov),
                depth: projected.depth_cam[i],
                color: sh_color(set.sh(i), set.sh_degree, &dir),
                opacity: sigmoid(set.opacity_logits[i] as f64) * mask_gate(set.mask_logits[i]),
                radius: projected.radius_px[i],
                valid: projected.valid[i],
            }
        })
        .collect()
}

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::{pose_of, Overrides, COV2D_DILATION, NEAR_CLIP};
use crate::math::quat_to_mat;
use crate::scene::{Camera, GaussianSet};

/// Screen-space footprint of every Gaussian in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vec<[f64; 2]>,
    /// Upper triangle `(xx, xy, yy)` of the dilated 2D covariance, px².
    pub cov2d: Vec<[f64; 3]>,
    pub depth_cam: Vec<f64>,
    pub radius_px: Vec<i64>,
    /// In front of the near plane and with a footprint overlapping the image.
    pub valid: Vec<bool>,
}

impl Projected2D {
    pub fn cov_matrix(&self, i: usize) -> Matrix2<f64> {
        let [a, b, c] = self.cov2d[i];
        Matrix2::new(a, b, b, c)
    }
}

pub fn project(set: &GaussianSet, camera: &Camera) -> Projected2D {
    project_with(set, camera, None)
}

/// Lateral bound, as a multiple of the half field of view, on the point where
/// the projection is linearized. Far off-axis Gaussians near the camera plane
/// would otherwise blow up into full-screen footprints.
const JACOBIAN_FOV_GUARD: f64 = 1.3;

/// Camera-space point at which the projection is linearized, with flags for
/// the lateral components that were clamped.
pub(crate) fn jacobian_point(camera: &Camera, t: &Vector3<f64>) -> (Vector3<f64>, [bool; 2]) {
    let lim_x = JACOBIAN_FOV_GUARD * 0.5 * camera.width as f64 / camera.fx;
    let lim_y = JACOBIAN_FOV_GUARD * 0.5 * camera.height as f64 / camera.fy;
    let (rx, ry) = (t.x / t.z, t.y / t.z);
    let (cx, cy) = (rx.clamp(-lim_x, lim_x), ry.clamp(-lim_y, lim_y));
    (Vector3::new(cx * t.z, cy * t.z, t.z), [cx != rx, cy != ry])
}

/// Jacobian of the perspective projection, linearized at the clamped camera-space point.
pub(crate) fn projection_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let (t, _) = jacobian_point(camera, t);
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    )
}

pub(crate) fn project_with(set: &GaussianSet, camera: &Camera, overrides: Option<&Overrides>) -> Projected2D {
    let n = set.len();
    let mut out = Projected2D {
        mean2d: Vec::with_capacity(n),
        cov2d: Vec::with_capacity(n),
        depth_cam: Vec::with_capacity(n),
        radius_px: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
    };
    let w = &camera.rotation_w2c;
    for i in 0..n {
        let (pos, unit_q, _) = pose_of(set, overrides, i);
        let t = w * pos + camera.translation_w2c;
        out.depth_cam.push(t.z);
        if t.z <= NEAR_CLIP {
            out.mean2d.push([f64::NAN; 2]);
            out.cov2d.push([f64::NAN; 3]);
            out.radius_px.push(0);
            out.valid.push(false);
            continue;
        }
        let mean = [camera.fx * t.x / t.z + camera.cx, camera.fy * t.y / t.z + camera.cy];
        let m = quat_to_mat(&unit_q) * Matrix3::from_diagonal(&set.scales(i));
        let sigma = m * m.transpose();
        let j = projection_jacobian(camera, &t);
        let cov = j * (w * sigma * w.transpose()) * j.transpose() + Matrix2::identity() * COV2D_DILATION;
        let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let radius = (3.0 * lambda_max.sqrt()).ceil() as i64;
        let r = radius as f64;
        let on_screen = mean[0] + r >= 0.0
            && mean[0] - r <= (camera.width - 1) as f64
            && mean[1] + r >= 0.0
            && mean[1] - r <= (camera.height - 1) as f64;
        out.mean2d.push(mean);
        out.cov2d.push([a, b, c]);
        out.radius_px.push(radius);
        out.valid.push(on_screen);
    }
    out
}

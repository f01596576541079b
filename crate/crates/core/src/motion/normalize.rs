use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::Camera;

const MIN_HALF_EXTENT: f64 = 1e-6;

/// Affine map of scene positions into the encoder's `[-1, 1]³` box.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneNormalizer {
    pub center: Vector3<f64>,
    pub half_extent: Vector3<f64>,
    pub margin: f64,
}

impl SceneNormalizer {
    pub fn identity() -> Self {
        Self {
            center: Vector3::zeros(),
            half_extent: Vector3::repeat(1.0),
            margin: 1.0,
        }
    }

    /// Box spanned by arbitrary points, e.g. the canonical Gaussian centers.
    pub fn from_points(points: &[Vector3<f64>], margin: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateCameraSpan);
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if (hi - lo).max() <= 0.0 {
            return Err(Error::DegenerateCameraSpan);
        }
        Ok(Self {
            center: (lo + hi) / 2.0,
            half_extent: ((hi - lo) * (margin / 2.0)).map(|v| v.max(MIN_HALF_EXTENT)),
            margin,
        })
    }

    /// `((p − center) / half_extent)` clamped componentwise to `[-1, 1]`.
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center)
            .component_div(&self.half_extent)
            .map(|v| v.clamp(-1.0, 1.0))
    }

    /// Derivative of each normalized component w.r.t. its input; zero where clamped.
    pub fn derivative(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let raw = (p - self.center).component_div(&self.half_extent);
        Vector3::new(
            if raw.x.abs() < 1.0 { 1.0 / self.half_extent.x } else { 0.0 },
            if raw.y.abs() < 1.0 { 1.0 / self.half_extent.y } else { 0.0 },
            if raw.z.abs() < 1.0 { 1.0 / self.half_extent.z } else { 0.0 },
        )
    }
}

/// Normalizer whose box is the range of camera centers, scaled by `margin`.
pub fn fit_normalizer(cameras: &[Camera], margin: f64) -> Result<SceneNormalizer> {
    let centers: Vec<_> = cameras.iter().map(Camera::center).collect();
    SceneNormalizer::from_points(&centers, margin)
}

pub fn normalize_position(p: &Vector3<f64>, normalizer: &SceneNormalizer) -> Vector3<f64> {
    normalizer.normalize(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn cam_at(c: Vector3<f64>) -> Camera {
        Camera {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
            rotation_w2c: Matrix3::identity(),
            translation_w2c: -c,
            time_index: 0,
        }
    }

    #[test]
    fn cube_span() {
        let n = fit_normalizer(&[cam_at(Vector3::zeros()), cam_at(Vector3::repeat(10.0))], 1.0).unwrap();
        assert_eq!(n.center, Vector3::repeat(5.0));
        assert_eq!(n.half_extent, Vector3::repeat(5.0));
    }

    #[test]
    fn anisotropic_span() {
        let cams = [
            cam_at(Vector3::new(0.0, 0.0, 0.0)),
            cam_at(Vector3::new(10.0, 1.0, 2.0)),
            cam_at(Vector3::new(3.0, 2.0, 0.5)),
        ];
        let n = fit_normalizer(&cams, 1.0).unwrap();
        assert_eq!(n.half_extent, Vector3::new(5.0, 1.0, 1.0));
    }

    #[test]
    fn coincident_cameras_fail() {
        let c = Vector3::new(1.0, 2.0, 3.0);
        let err = fit_normalizer(&[cam_at(c), cam_at(c)], 1.05).unwrap_err();
        assert_eq!(err.to_string(), "degenerate camera span");
        assert!(fit_normalizer(&[cam_at(c)], 1.05).is_err());
    }

    #[test]
    fn flat_axis_is_floored() {
        let n = fit_normalizer(&[cam_at(Vector3::zeros()), cam_at(Vector3::new(2.0, 0.0, 0.0))], 1.0).unwrap();
        assert_eq!(n.half_extent, Vector3::new(1.0, 1e-6, 1e-6));
    }

    #[test]
    fn normalize_examples() {
        let n = SceneNormalizer {
            center: Vector3::new(1.0, 2.0, 3.0),
            half_extent: Vector3::new(2.0, 4.0, 0.5),
            margin: 1.0,
        };
        assert_eq!(normalize_position(&n.center, &n), Vector3::zeros());
        assert_eq!(normalize_position(&(n.center + Vector3::new(6.0, 0.0, 0.0)), &n), Vector3::new(1.0, 0.0, 0.0));
        let p = n.center + Vector3::new(1.0, -4.0, 1.0);
        assert_eq!(normalize_position(&p, &n), Vector3::new(0.5, -1.0, 1.0));
    }

    proptest! {
        #[test]
        fn output_in_box_and_clamp_idempotent(p in prop::array::uniform3(-100.0f64..100.0)) {
            let n = SceneNormalizer {
                center: Vector3::new(0.5, -1.0, 2.0),
                half_extent: Vector3::new(3.0, 0.2, 7.0),
                margin: 1.05,
            };
            let q = n.normalize(&Vector3::from(p));
            prop_assert!(q.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(SceneNormalizer::identity().normalize(&q), q);
        }
    }
}

//! Synthetic ambient scenes with known geometry and motion.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{logit, SH_C0};
use crate::motion::{eval_trajectory, DctBasis};
use crate::raster::{render_reference, RenderOutput};
use crate::scene::{Camera, Dataset, DepthMap, Frame, GaussianSet};

/// Depth is left undefined where the ground-truth render is less opaque than this.
const DEPTH_MIN_ALPHA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum CameraPath {
    /// Ring around the origin, looking inward. The height bobs by `bob` twice
    /// per sequence so the camera box has vertical extent.
    Orbit { radius: f64, height: f64, bob: f64, span_degrees: f64 },
    /// Straight approach along +z towards the origin with a sideways sway.
    Dolly { start: f64, end: f64, height: f64, sway: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub foreground: usize,
    pub background: usize,
    pub clusters: usize,
    /// Sequence length `T`.
    pub frames: usize,
    /// Basis size; `⌈T/4⌉` when `None`.
    pub basis_size: Option<usize>,
    /// Bound on each active coefficient, in scene units.
    pub amplitude: f64,
    /// 0-based basis indices that carry motion.
    pub active: Vec<usize>,
    pub path: CameraPath,
    pub width: usize,
    pub height: usize,
    /// Standard deviation of additive pixel noise before quantization.
    pub noise: f64,
    /// Radius of the background shell.
    pub shell_radius: f64,
    /// Standard deviation of the point-cloud jitter, in scene units.
    pub point_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            foreground: 200,
            background: 300,
            clusters: 4,
            frames: 40,
            basis_size: None,
            amplitude: 0.2,
            active: vec![0, 1, 2],
            path: CameraPath::Orbit {
                radius: 3.0,
                height: 0.0,
                bob: 0.9,
                span_degrees: 360.0,
            },
            width: 96,
            height: 96,
            noise: 0.0,
            shell_radius: 12.0,
            point_jitter: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn basis_len(&self) -> usize {
        self.basis_size.unwrap_or(self.frames.div_ceil(4)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.frames < 4 {
            return bad(format!("sequence needs at least 4 frames, got {}", self.frames));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad(format!("amplitude must be finite and non-negative, got {}", self.amplitude));
        }
        if !(self.noise >= 0.0 && self.point_jitter >= 0.0) {
            return bad("noise and jitter must be non-negative".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.foreground + self.background == 0 {
            return bad("scene has no Gaussians".into());
        }
        if self.foreground > 0 && self.clusters == 0 {
            return bad("foreground needs at least one cluster".into());
        }
        if let Some(&k) = self.active.iter().find(|&&k| k >= self.basis_len()) {
            return bad(format!("active index {k} outside basis of size {}", self.basis_len()));
        }
        match self.path {
            CameraPath::Orbit { radius, .. } if radius <= 0.0 => bad("orbit radius must be positive".into()),
            CameraPath::Dolly { start, end, .. } if start <= 0.0 || end <= 0.0 => {
                bad("dolly distances must be positive".into())
            }
            _ => Ok(()),
        }
    }

    fn camera(&self, t: usize) -> Camera {
        let s = if self.frames > 1 { t as f64 / (self.frames - 1) as f64 } else { 0.0 };
        let f = 0.8 * self.width as f64;
        let eye = match self.path {
            CameraPath::Orbit {
                radius,
                height,
                bob,
                span_degrees,
            } => {
                // a full ring would repeat its first view, so step by span / T
                let a = (span_degrees.to_radians() / self.frames as f64) * t as f64 - span_degrees.to_radians() / 2.0;
                Vector3::new(radius * a.sin(), height + bob * (4.0 * PI * s).sin(), -radius * a.cos())
            }
            CameraPath::Dolly { start, end, height, sway } => {
                Vector3::new(sway * (2.0 * PI * s).sin(), height, -(start + (end - start) * s))
            }
        };
        Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), f, f, self.width, self.height, t)
    }
}

/// A generated scene: canonical Gaussians, their true trajectories and the rendered captures.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub set: GaussianSet,
    /// Per Gaussian, `3 × K` position coefficients, axis-major. Rotations do not move.
    pub coefficients: Vec<f64>,
    pub basis: DctBasis,
    /// Gaussians `foreground..` belong to the background shell.
    pub foreground: usize,
    pub dataset: Dataset,
}

impl SynthScene {
    pub fn phi(&self, i: usize, axis: usize) -> &[f64] {
        let k = self.basis.size;
        &self.coefficients[(i * 3 + axis) * k..(i * 3 + axis + 1) * k]
    }

    pub fn is_background(&self, i: usize) -> bool {
        i >= self.foreground
    }

    pub fn offset(&self, i: usize, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|a, _| eval_trajectory(self.phi(i, a), &self.basis, t))
    }

    /// Ground-truth Gaussians at time `t`; `t ≥ T` continues the same cosines.
    pub fn set_at(&self, t: f64) -> GaussianSet {
        let mut s = self.set.clone();
        for i in 0..s.len() {
            let d = self.offset(i, t);
            for a in 0..3 {
                s.positions[i][a] = (s.positions[i][a] as f64 + d[a]) as f32;
            }
        }
        s
    }

    pub fn render_at(&self, camera: &Camera, t: f64) -> RenderOutput {
        render_reference(&self.set_at(t), camera, [0.0; 3])
    }

    /// Camera the capture would have used at frame `t`, including `t ≥ T`.
    pub fn camera_at(&self, t: usize) -> Camera {
        self.spec.camera(t)
    }
}

fn sh_from_rgb(c: [f64; 3]) -> [f32; 3] {
    c.map(|v| ((v - 0.5) / SH_C0) as f32)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.basis_len();
    let basis = DctBasis::new(spec.frames, k)?;
    let mut set = GaussianSet::empty(0);
    let mut coefficients = Vec::with_capacity((spec.foreground + spec.background) * 3 * k);
    let push = |set: &mut GaussianSet, p: Vector3<f64>, q: UnitQuaternion<f64>, s: [f64; 3], o: f64, c: [f64; 3]| {
        set.positions.push([p.x as f32, p.y as f32, p.z as f32]);
        let q = q.into_inner();
        set.rotations.push([q.w as f32, q.i as f32, q.j as f32, q.k as f32]);
        set.log_scales.push(s.map(|v| v.ln() as f32));
        set.opacity_logits.push(logit(o) as f32);
        set.colors.extend_from_slice(&sh_from_rgb(c));
        set.mask_logits.push(logit(0.99) as f32);
    };

    let jitter = Normal::new(0.0, 0.16).expect("valid deviation");
    for c in 0..spec.clusters.min(spec.foreground.max(1)) {
        let members = spec.foreground / spec.clusters + usize::from(c < spec.foreground % spec.clusters);
        if members == 0 {
            continue;
        }
        let a = 2.0 * PI * (c as f64 + rng.random_range(0.0..0.5)) / spec.clusters as f64;
        let r = rng.random_range(0.2..0.55);
        let center = Vector3::new(r * a.cos(), rng.random_range(-0.15..0.15), r * a.sin());
        let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.9));
        let mut phi = vec![0.0; 3 * k];
        for axis in 0..3 {
            // vertical sway is weaker than horizontal
            let bound = if axis == 1 { 0.3 * spec.amplitude } else { spec.amplitude };
            for &j in &spec.active {
                phi[axis * k + j] = if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
            }
        }
        for _ in 0..members {
            let off = Vector3::new(jitter.sample(&mut rng), 1.2 * jitter.sample(&mut rng), jitter.sample(&mut rng))
                .map(|v: f64| v.clamp(-0.45, 0.45));
            let p = center + off;
            // world up is −y; tips sway more than bases
            let lift = ((-off.y) / 0.5 + 0.5).clamp(0.0, 1.0);
            let w = 0.3 + 0.7 * lift;
            coefficients.extend(phi.iter().map(|v| v * w));
            let q = UnitQuaternion::from_euler_angles(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            let s = std::array::from_fn(|_| rng.random_range(0.03..0.07));
            let col = base.map(|b| (b + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0));
            push(&mut set, p, q, s, rng.random_range(0.6..0.95), col);
        }
    }
    let foreground = set.len();

    // Fibonacci points on a band of the shell
    let band = 55f64.to_radians().sin();
    let n_bg = spec.background;
    let spacing = (4.0 * PI * spec.shell_radius.powi(2) * band / n_bg.max(1) as f64).sqrt();
    let golden = PI * (3.0 - 5f64.sqrt());
    for j in 0..n_bg {
        let y = band * (1.0 - 2.0 * (j as f64 + 0.5) / n_bg as f64);
        let ring = (1.0 - y * y).sqrt();
        let az = golden * j as f64;
        let dir = Vector3::new(ring * az.cos(), y, ring * az.sin());
        let q = UnitQuaternion::rotation_between(&Vector3::z(), &dir).unwrap_or_else(UnitQuaternion::identity);
        let col: [f64; 3] = [
            0.45 + 0.25 * (3.0 * az).sin() * ring,
            0.55 + 0.2 * y,
            0.4 + 0.25 * (2.0 * az + 1.0).cos(),
        ]
        .map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
        let s = [0.7 * spacing, 0.7 * spacing, 0.15 * spacing];
        push(&mut set, dir * spec.shell_radius, q, s, 0.97, col);
        coefficients.extend(std::iter::repeat_n(0.0, 3 * k));
    }

    let point_noise = Normal::new(0.0, spec.point_jitter).expect("valid deviation");
    let mut init_points = Vec::with_capacity(set.len());
    let mut init_colors = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let p = set.positions[i];
        init_points.push(std::array::from_fn(|a| p[a] as f64 + point_noise.sample(&mut rng)));
        init_colors.push(std::array::from_fn(|ch| SH_C0 * set.colors[i * 3 + ch] as f64 + 0.5));
    }

    let mut scene = SynthScene {
        spec: spec.clone(),
        set,
        coefficients,
        basis,
        foreground,
        dataset: Dataset {
            frames: Vec::new(),
            cameras: Vec::new(),
            init_points,
            init_colors,
            total_frames: spec.frames,
        },
    };
    let noise_seeds: Vec<u64> = (0..spec.frames).map(|_| rng.random()).collect();
    let captures: Vec<(Frame, Camera)> = (0..spec.frames)
        .into_par_iter()
        .map(|t| {
            let cam = scene.camera_at(t);
            let out = scene.render_at(&cam, t as f64);
            let mut image = out.image();
            if spec.noise > 0.0 {
                let mut r = ChaCha8Rng::seed_from_u64(noise_seeds[t]);
                let n = Normal::new(0.0, spec.noise).expect("valid deviation");
                image.data.iter_mut().for_each(|v| *v += n.sample(&mut r));
            }
            image.quantize8();
            let depth = out
                .depth
                .iter()
                .zip(&out.alpha)
                .map(|(&d, &a)| if a >= DEPTH_MIN_ALPHA { d as f32 as f64 } else { 0.0 })
                .collect();
            let frame = Frame {
                image,
                depth: Some(DepthMap {
                    width: spec.width,
                    height: spec.height,
                    data: depth,
                }),
                time_index: t,
            };
            (frame, cam)
        })
        .collect();
    for (f, c) in captures {
        scene.dataset.frames.push(f);
        scene.dataset.cameras.push(c);
    }
    Ok(scene)
}

/// Withholds `n_segments` contiguous runs of `seg_len` frames at evenly spaced
/// offsets. Returns `(train, test)`.
pub fn held_out_split(dataset: &Dataset, n_segments: usize, seg_len: usize) -> Result<(Dataset, Dataset)> {
    let len = dataset.len();
    let held = n_segments * seg_len;
    if len <= held {
        return Err(Error::DatasetTooShort { len, required: held });
    }
    let free = len - held;
    let mut test_mask = vec![false; len];
    for s in 0..n_segments {
        let start = free * (s + 1) / (n_segments + 1) + s * seg_len;
        test_mask[start..start + seg_len].iter_mut().for_each(|m| *m = true);
    }
    let test: Vec<usize> = (0..len).filter(|&i| test_mask[i]).collect();
    let train: Vec<usize> = (0..len).filter(|&i| !test_mask[i]).collect();
    if train.len() < test.len() {
        log::warn!("only {} training frames remain against {} held out", train.len(), test.len());
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::fit_coefficients_lsq;

    fn small() -> SynthSpec {
        SynthSpec {
            foreground: 24,
            background: 30,
            clusters: 3,
            frames: 8,
            active: vec![0, 1],
            width: 24,
            height: 24,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.set, c.set);
    }

    #[test]
    fn still_scene_has_identical_frames_from_one_view() {
        let spec = SynthSpec {
            amplitude: 0.0,
            path: CameraPath::Orbit {
                radius: 3.0,
                height: 0.0,
                bob: 0.0,
                span_degrees: 0.0,
            },
            ..small()
        };
        let s = generate(&spec).unwrap();
        for f in &s.dataset.frames[1..] {
            assert_eq!(f.image, s.dataset.frames[0].image);
        }
    }

    #[test]
    fn single_active_index_traces_one_cosine() {
        let s = generate(&SynthSpec { active: vec![0], ..small() }).unwrap();
        let t_len = s.spec.frames as f64;
        let norm = (2.0 / (s.basis.size as f64 + 1.0)).sqrt();
        for i in 0..s.foreground {
            for axis in 0..3 {
                let phi0 = s.phi(i, axis)[0];
                for t in 0..s.spec.frames {
                    let by_hand = phi0 * norm * (PI / (2.0 * t_len) * (2.0 * t as f64 + 1.0)).cos();
                    assert!((s.offset(i, t as f64)[axis] - by_hand).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn traces_are_recoverable_and_background_is_still() {
        let s = generate(&small()).unwrap();
        for i in 0..s.set.len() {
            for axis in 0..3 {
                let samples: Vec<(f64, f64)> = (0..s.spec.frames).map(|t| (t as f64, s.offset(i, t as f64)[axis])).collect();
                let (phi, _) = fit_coefficients_lsq(&samples, &s.basis).unwrap();
                for (a, b) in phi.iter().zip(s.phi(i, axis)) {
                    assert!((a - b).abs() < 1e-9);
                }
                if s.is_background(i) {
                    assert!(s.phi(i, axis).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn foreground_sits_inside_camera_box_and_shell_outside() {
        let s = generate(&SynthSpec::default()).unwrap();
        let n = crate::motion::fit_normalizer(&s.dataset.cameras, 1.05).unwrap();
        for i in 0..s.set.len() {
            let raw = (s.set.position(i) - n.center).component_div(&n.half_extent);
            if s.is_background(i) {
                assert!(raw.amax() > 1.0);
            } else {
                assert!(raw.amax() < 1.0, "{i}: {raw:?}");
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&SynthSpec { frames: 1, ..small() }).is_err());
        assert!(generate(&SynthSpec { amplitude: -1.0, ..small() }).is_err());
        assert!(generate(&SynthSpec { active: vec![2], ..small() }).is_err());
    }

    fn frames(n: usize) -> Dataset {
        let s = generate(&SynthSpec {
            frames: 4,
            width: 4,
            height: 4,
            foreground: 2,
            background: 2,
            active: vec![0],
            ..small()
        })
        .unwrap();
        let d = s.dataset;
        let idx: Vec<usize> = (0..n).map(|i| i % 4).collect();
        d.subset(&idx)
    }

    #[test]
    fn split_sizes() {
        let (train, test) = held_out_split(&frames(300), 3, 30).unwrap();
        assert_eq!((train.len(), test.len()), (210, 90));
        let (train, test) = held_out_split(&frames(300), 3, 0).unwrap();
        assert_eq!((train.len(), test.len()), (300, 0));
        let (train, test) = held_out_split(&frames(120), 3, 30).unwrap();
        assert_eq!((train.len(), test.len()), (30, 90));
        assert!(matches!(held_out_split(&frames(90), 3, 30), Err(Error::DatasetTooShort { .. })));
    }

    #[test]
    fn split_segments_are_contiguous_and_spaced() {
        let mut d = frames(40);
        for (i, f) in d.frames.iter_mut().enumerate() {
            f.image.data[0] = i as f64;
        }
        let (_, test) = held_out_split(&d, 3, 4).unwrap();
        let ids: Vec<usize> = test.frames.iter().map(|f| f.image.data[0] as usize).collect();
        assert_eq!(ids, vec![7, 8, 9, 10, 18, 19, 20, 21, 29, 30, 31, 32]);
    }
}

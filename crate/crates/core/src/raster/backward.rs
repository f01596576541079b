//! Adjoint of projection and front-to-back compositing.
//!
//! For a pixel with terms `i = 0..m`, transmittance `T_i` before term `i`, and
//! upstream value `v_i = ⟨g, c_i⟩ + g_d z_i`, the loss derivative w.r.t. the
//! term's alpha is `T_i (v_i − S_i)`, where `S_i` is everything behind term `i`
//! (including the background) normalized by the transmittance after it. `S` is
//! accumulated back to front, so no division by `1 − α` is needed.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::TILE_SIZE;
use super::project::{jacobian_point, projection_jacobian};
use super::{mask_gate, pose_of, prepare, Overrides, RenderOutput};
use crate::error::{Error, Result};
use crate::math::{quat_normalize_backward, quat_to_mat, quat_to_mat_backward, sigmoid, SH_C0, SH_C1};
use crate::scene::{Camera, GaussianSet};

/// Loss gradients w.r.t. every Gaussian parameter.
///
/// When rendering used [`Overrides`], `positions` and `rotations` are w.r.t.
/// the override values (the raw, unnormalized quaternion).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub mask_logits: Vec<f64>,
    pub colors: Vec<f64>,
    /// Gradient w.r.t. the projected 2D mean, in pixels.
    pub mean2d: Vec<[f64; 2]>,
}

impl Gradients {
    pub fn zeros(n: usize, color_stride: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            mask_logits: vec![0.0; n],
            colors: vec![0.0; n * color_stride],
            mean2d: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Every entry, for norm and equality checks.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.positions.iter().flatten());
        v.extend(self.rotations.iter().flatten());
        v.extend(self.log_scales.iter().flatten());
        v.extend(&self.opacity_logits);
        v.extend(&self.mask_logits);
        v.extend(&self.colors);
        v
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    depth: f64,
    opacity: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
    }
}

/// Gradients of `⟨grad_color, color⟩ + ⟨grad_depth, depth⟩` for a render.
pub fn render_backward(
    set: &GaussianSet,
    camera: &Camera,
    overrides: Option<&Overrides>,
    output: &RenderOutput,
    grad_color: &[f64],
    grad_depth: Option<&[f64]>,
) -> Result<Gradients> {
    let (w, h) = (camera.width, camera.height);
    if output.width != w || output.height != h {
        return Err(Error::ShapeMismatch("render output does not match camera".into()));
    }
    if grad_color.len() != w * h * 3 {
        return Err(Error::ShapeMismatch(format!(
            "grad_color has {} entries, expected {}",
            grad_color.len(),
            w * h * 3
        )));
    }
    if let Some(gd) = grad_depth {
        if gd.len() != w * h {
            return Err(Error::ShapeMismatch(format!(
                "grad_depth has {} entries, expected {}",
                gd.len(),
                w * h
            )));
        }
    }
    if let Some(o) = overrides {
        if o.positions.len() != set.len() || o.rotations.len() != set.len() {
            return Err(Error::ShapeMismatch("overrides do not match gaussian count".into()));
        }
    }

    let n = set.len();
    let splats = prepare(set, camera, overrides);
    let bg = output.background;

    // Bands of tile rows accumulate densely, then reduce in band order.
    let bands: Vec<Vec<ScreenGrad>> = (0..h.div_ceil(TILE_SIZE))
        .into_par_iter()
        .map(|band| {
            let mut acc = vec![ScreenGrad::default(); n];
            let mut trans = Vec::new();
            for y in band * TILE_SIZE..((band + 1) * TILE_SIZE).min(h) {
                for x in 0..w {
                    let p = y * w + x;
                    let terms = output.contributors.pixel(p);
                    if terms.is_empty() {
                        continue;
                    }
                    let g = [grad_color[3 * p], grad_color[3 * p + 1], grad_color[3 * p + 2]];
                    let gd = grad_depth.map_or(0.0, |d| d[p]);
                    trans.clear();
                    let mut t = 1.0;
                    for c in terms {
                        trans.push(t);
                        t *= 1.0 - c.alpha;
                    }
                    let mut behind = g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2];
                    for (k, c) in terms.iter().enumerate().rev() {
                        let i = c.index as usize;
                        let s = &splats[i];
                        let tk = trans[k];
                        let v = g[0] * s.color.x + g[1] * s.color.y + g[2] * s.color.z + gd * s.depth;
                        let d_alpha = tk * (v - behind);
                        behind = c.alpha * v + (1.0 - c.alpha) * behind;

                        let a = &mut acc[i];
                        let wgt = tk * c.alpha;
                        a.color[0] += g[0] * wgt;
                        a.color[1] += g[1] * wgt;
                        a.color[2] += g[2] * wgt;
                        a.depth += gd * wgt;
                        // alpha = opacity · exp(power)
                        a.opacity += d_alpha * c.alpha / s.opacity;
                        let d_power = d_alpha * c.alpha;
                        let dx = x as f64 - s.mean.x;
                        let dy = y as f64 - s.mean.y;
                        let [ca, cb, cc] = s.conic;
                        a.mean[0] += d_power * (ca * dx + cb * dy);
                        a.mean[1] += d_power * (cb * dx + cc * dy);
                        a.conic[0] += d_power * (-0.5 * dx * dx);
                        a.conic[1] += d_power * (-dx * dy);
                        a.conic[2] += d_power * (-0.5 * dy * dy);
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); n];
    for band in &bands {
        for (s, b) in screen.iter_mut().zip(band) {
            s.add(b);
        }
    }

    let stride = set.color_stride();
    let cam_center = camera.center();
    let per_gaussian: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| gaussian_backward(set, camera, overrides, &cam_center, &splats[i], &screen[i], i, stride))
        .collect();

    let mut grads = Gradients::zeros(n, stride);
    for (i, g) in per_gaussian.into_iter().enumerate() {
        grads.positions[i] = g.position;
        grads.rotations[i] = g.rotation;
        grads.log_scales[i] = g.log_scale;
        grads.opacity_logits[i] = g.opacity_logit;
        grads.mask_logits[i] = g.mask_logit;
        grads.colors[i * stride..(i + 1) * stride].copy_from_slice(&g.color[..stride]);
        grads.mean2d[i] = screen[i].mean;
    }
    Ok(grads)
}

struct GaussianGrad {
    position: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    opacity_logit: f64,
    mask_logit: f64,
    color: [f64; 12],
}

#[allow(clippy::too_many_arguments)]
fn gaussian_backward(
    set: &GaussianSet,
    camera: &Camera,
    overrides: Option<&Overrides>,
    cam_center: &Vector3<f64>,
    splat: &super::Splat,
    sg: &ScreenGrad,
    i: usize,
    stride: usize,
) -> GaussianGrad {
    let mut out = GaussianGrad {
        position: [0.0; 3],
        rotation: [0.0; 4],
        log_scale: [0.0; 3],
        opacity_logit: 0.0,
        mask_logit: 0.0,
        color: [0.0; 12],
    };
    if !splat.valid {
        return out;
    }
    let (pos, unit_q, raw_q) = pose_of(set, overrides, i);
    let mut d_pos = Vector3::zeros();

    // view-dependent color
    let sh = set.sh(i);
    let view = pos - cam_center;
    let dist = view.norm();
    let dir = view / dist;
    let dc = sg.color;
    for ch in 0..3 {
        out.color[ch] = SH_C0 * dc[ch];
    }
    if set.sh_degree >= 1 {
        let mut d_dir = Vector3::zeros();
        for ch in 0..3 {
            out.color[3 + ch] = -SH_C1 * dir.y * dc[ch];
            out.color[6 + ch] = SH_C1 * dir.z * dc[ch];
            out.color[9 + ch] = -SH_C1 * dir.x * dc[ch];
            d_dir.x += -SH_C1 * sh[9 + ch] as f64 * dc[ch];
            d_dir.y += -SH_C1 * sh[3 + ch] as f64 * dc[ch];
            d_dir.z += SH_C1 * sh[6 + ch] as f64 * dc[ch];
        }
        d_pos += (d_dir - dir * dir.dot(&d_dir)) / dist;
    }
    debug_assert!(stride <= 12);

    // opacity and straight-through mask
    let sig = sigmoid(set.opacity_logits[i] as f64);
    let msig = sigmoid(set.mask_logits[i] as f64);
    out.opacity_logit = sg.opacity * mask_gate(set.mask_logits[i]) * sig * (1.0 - sig);
    out.mask_logit = sg.opacity * sig * msig * (1.0 - msig);

    // camera-space point
    let w = &camera.rotation_w2c;
    let t = w * pos + camera.translation_w2c;
    let iz = 1.0 / t.z;
    let (fx, fy) = (camera.fx, camera.fy);
    let mut d_t = Vector3::new(0.0, 0.0, sg.depth);
    let [du, dv] = sg.mean;
    d_t.x += du * fx * iz;
    d_t.y += dv * fy * iz;
    d_t.z += -du * fx * t.x * iz * iz - dv * fy * t.y * iz * iz;

    // conic -> 2D covariance -> 3D covariance and Jacobian
    let [ca, cb, cc] = splat.conic;
    let conic = Matrix2::new(ca, cb, cb, cc);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    let rot = quat_to_mat(&unit_q);
    let scales = set.scales(i);
    let m = rot * Matrix3::from_diagonal(&scales);
    let sigma = m * m.transpose();
    let view_cov = w * sigma * w.transpose();
    let j = projection_jacobian(camera, &t);
    let g_j = 2.0 * g_cov2d * j * view_cov;
    let g_view = j.transpose() * g_cov2d * j;
    let g_sigma = w.transpose() * g_view * w;

    // a clamped lateral component scales with depth and no longer depends on itself
    let (tj, clamped) = jacobian_point(camera, &t);
    let iz2 = iz * iz;
    let lateral = |g: f64, f: f64, c: f64, hit: bool| if hit { g * f * c * iz2 * iz } else { g * 2.0 * f * c * iz2 * iz };
    if !clamped[0] {
        d_t.x += g_j[(0, 2)] * (-fx * iz2);
    }
    if !clamped[1] {
        d_t.y += g_j[(1, 2)] * (-fy * iz2);
    }
    d_t.z += g_j[(0, 0)] * (-fx * iz2)
        + lateral(g_j[(0, 2)], fx, tj.x, clamped[0])
        + g_j[(1, 1)] * (-fy * iz2)
        + lateral(g_j[(1, 2)], fy, tj.y, clamped[1]);

    d_pos += w.transpose() * d_t;
    out.position = [d_pos.x, d_pos.y, d_pos.z];

    // Σ = M Mᵀ with M = R S
    let g_m = 2.0 * g_sigma * m;
    let mut g_rot = Matrix3::zeros();
    for k in 0..3 {
        let mut d_s = 0.0;
        for r in 0..3 {
            d_s += g_m[(r, k)] * rot[(r, k)];
            g_rot[(r, k)] = g_m[(r, k)] * scales[k];
        }
        out.log_scale[k] = d_s * scales[k];
    }
    let d_unit = quat_to_mat_backward(&unit_q, &g_rot);
    out.rotation = quat_normalize_backward(&raw_q, &d_unit);
    out
}

use crate::error::{Error, Result};
use crate::raster::Gradients;
use crate::scene::GaussianSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;

/// Adaptive-moment state for one flat parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize, eps: f64) -> Self {
        Self {
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = (params[i] as f64 - lr * mh / (vh.sqrt() + self.eps)) as f32;
        }
    }

    /// Keeps rows of `width` entries where `keep` is set.
    pub fn retain_rows(&mut self, keep: &[bool], width: usize) {
        let filter = |v: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(v.len());
            for (r, &k) in keep.iter().enumerate() {
                if k {
                    out.extend_from_slice(&v[r * width..(r + 1) * width]);
                }
            }
            *v = out;
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }

    /// Appends `rows` zeroed rows of `width` entries.
    pub fn append_rows(&mut self, rows: usize, width: usize) {
        self.m.resize(self.m.len() + rows * width, 0.0);
        self.v.resize(self.v.len() + rows * width, 0.0);
    }

    pub fn zero_rows(&mut self, rows: &[usize], width: usize) {
        for &r in rows {
            self.m[r * width..(r + 1) * width].fill(0.0);
            self.v[r * width..(r + 1) * width].fill(0.0);
        }
    }
}

/// Per-class learning rates for one optimizer step. Zero freezes a class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub mask: f64,
}

/// Moments for every Gaussian parameter array, kept row-aligned with the set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOptimizer {
    pub positions: Adam,
    pub rotations: Adam,
    pub log_scales: Adam,
    pub opacity: Adam,
    pub colors: Adam,
    pub mask: Adam,
    color_stride: usize,
}

const EPS: f64 = 1e-15;

fn flat3(v: &mut [[f32; 3]]) -> &mut [f32] {
    v.as_flattened_mut()
}

impl GaussianOptimizer {
    pub fn new(set: &GaussianSet) -> Self {
        let n = set.len();
        Self {
            positions: Adam::new(3 * n, EPS),
            rotations: Adam::new(4 * n, EPS),
            log_scales: Adam::new(3 * n, EPS),
            opacity: Adam::new(n, EPS),
            colors: Adam::new(n * set.color_stride(), EPS),
            mask: Adam::new(n, EPS),
            color_stride: set.color_stride(),
        }
    }

    fn widths(&self) -> [(usize, &Adam); 6] {
        [
            (3, &self.positions),
            (4, &self.rotations),
            (3, &self.log_scales),
            (1, &self.opacity),
            (self.color_stride, &self.colors),
            (1, &self.mask),
        ]
    }

    /// Errors unless every moment array has one row per Gaussian.
    pub fn check_aligned(&self, set: &GaussianSet) -> Result<()> {
        for (w, a) in self.widths() {
            if a.len() != w * set.len() {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer rows {} for {} Gaussians",
                    a.len() / w.max(1),
                    set.len()
                )));
            }
        }
        Ok(())
    }

    pub fn step(&mut self, set: &mut GaussianSet, g: &Gradients, lr: &LearningRates) {
        if lr.position > 0.0 {
            self.positions.update(flat3(&mut set.positions), g.positions.as_flattened(), lr.position);
        }
        if lr.rotation > 0.0 {
            self.rotations.update(set.rotations.as_flattened_mut(), g.rotations.as_flattened(), lr.rotation);
        }
        if lr.log_scale > 0.0 {
            self.log_scales.update(flat3(&mut set.log_scales), g.log_scales.as_flattened(), lr.log_scale);
        }
        if lr.opacity > 0.0 {
            self.opacity.update(&mut set.opacity_logits, &g.opacity_logits, lr.opacity);
        }
        if lr.color > 0.0 {
            self.colors.update(&mut set.colors, &g.colors, lr.color);
        }
        if lr.mask > 0.0 {
            self.mask.update(&mut set.mask_logits, &g.mask_logits, lr.mask);
        }
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let s = self.color_stride;
        self.positions.retain_rows(keep, 3);
        self.rotations.retain_rows(keep, 4);
        self.log_scales.retain_rows(keep, 3);
        self.opacity.retain_rows(keep, 1);
        self.colors.retain_rows(keep, s);
        self.mask.retain_rows(keep, 1);
    }

    pub fn append(&mut self, rows: usize) {
        let s = self.color_stride;
        self.positions.append_rows(rows, 3);
        self.rotations.append_rows(rows, 4);
        self.log_scales.append_rows(rows, 3);
        self.opacity.append_rows(rows, 1);
        self.colors.append_rows(rows, s);
        self.mask.append_rows(rows, 1);
    }
}

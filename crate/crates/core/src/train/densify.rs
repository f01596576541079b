//! Clone/split growth, opacity reset and mask pruning.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::GaussianOptimizer;
use crate::math::{logit, quat_to_mat, sigmoid};
use crate::raster::Gradients;
use crate::scene::GaussianSet;

const SPLIT_COUNT: usize = 2;
const SPLIT_SHRINK: f64 = 1.6;

/// Running screen-space gradient magnitudes since the last densification.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds the norm of the projected-mean gradient, converted from pixels to
    /// normalized device units, for each Gaussian that reached a pixel.
    pub fn record(&mut self, grads: &Gradients, visible: &[usize], width: usize, height: usize) {
        let (sx, sy) = (width as f64 / 2.0, height as f64 / 2.0);
        for &i in visible {
            let [gx, gy] = grads.mean2d[i];
            self.grad_sum[i] += ((gx * sx).powi(2) + (gy * sy).powi(2)).sqrt();
            self.count[i] += 1;
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
}

/// Clones small high-gradient Gaussians and splits large ones in two.
/// Statistics are reset for the new population.
pub fn densify<R: Rng>(
    set: &mut GaussianSet,
    opt: &mut GaussianOptimizer,
    stats: &mut DensifyStats,
    threshold: f64,
    split_size: f64,
    rng: &mut R,
) -> DensifyReport {
    let n = set.len();
    let hot: Vec<usize> = (0..n).filter(|&i| stats.average(i) >= threshold).collect();
    let max_scale = |set: &GaussianSet, i: usize| set.scales(i).max();
    let (to_clone, to_split): (Vec<usize>, Vec<usize>) = hot.into_iter().partition(|&i| max_scale(set, i) <= split_size);

    let source = set.clone();
    for &i in &to_clone {
        set.push(&source, i);
    }
    for &i in &to_split {
        let r = quat_to_mat(&source.unit_rotation(i));
        let s = source.scales(i);
        for _ in 0..SPLIT_COUNT {
            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let p = source.position(i) + r * s.component_mul(&z);
            set.push(&source, i);
            let last = set.len() - 1;
            set.positions[last] = [p.x as f32, p.y as f32, p.z as f32];
            for a in 0..3 {
                set.log_scales[last][a] = (s[a] / SPLIT_SHRINK).ln() as f32;
            }
        }
    }
    opt.append(set.len() - n);
    let mut keep = vec![true; set.len()];
    for &i in &to_split {
        keep[i] = false;
    }
    set.retain_mask(&keep);
    opt.retain(&keep);
    *stats = DensifyStats::new(set.len());
    DensifyReport {
        cloned: to_clone.len(),
        split: to_split.len(),
    }
}

/// Caps every opacity at `value` and clears the opacity moments.
pub fn reset_opacity(set: &mut GaussianSet, opt: &mut GaussianOptimizer, value: f64) {
    let cap = logit(value) as f32;
    for o in set.opacity_logits.iter_mut() {
        *o = o.min(cap);
    }
    let all: Vec<usize> = (0..set.len()).collect();
    opt.opacity.zero_rows(&all, 1);
}

/// Removes Gaussians whose mask value is below `threshold`; returns how many.
pub fn prune_by_mask(set: &mut GaussianSet, opt: &mut GaussianOptimizer, stats: &mut DensifyStats, threshold: f64) -> usize {
    let keep: Vec<bool> = set.mask_logits.iter().map(|&m| sigmoid(m as f64) >= threshold).collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        set.retain_mask(&keep);
        opt.retain(&keep);
        *stats = DensifyStats::new(set.len());
    }
    removed
}

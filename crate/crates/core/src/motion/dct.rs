use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cosine basis over `frames` timestamps with frequencies `1..=size`.
///
/// There is no constant term, so over the full sequence every basis function
/// sums to zero and the canonical position carries the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DctBasis {
    pub frames: usize,
    pub size: usize,
    table: Vec<f64>,
}

impl DctBasis {
    pub fn new(frames: usize, size: usize) -> Result<Self> {
        if frames == 0 || size == 0 {
            return Err(Error::InvalidInput(format!("basis needs frames ≥ 1 and size ≥ 1, got {frames} and {size}")));
        }
        let mut basis = Self {
            frames,
            size,
            table: Vec::with_capacity(frames * size),
        };
        for t in 0..frames {
            for k in 0..size {
                let v = basis.value(t as f64, k);
                basis.table.push(v);
            }
        }
        Ok(basis)
    }

    /// Basis of size `⌈frames · fraction⌉`.
    pub fn with_fraction(frames: usize, fraction: f64) -> Result<Self> {
        Self::new(frames, ((frames as f64 * fraction).ceil() as usize).max(1))
    }

    /// Function `k` (frequency `k + 1`) at time `t`.
    pub fn value(&self, t: f64, k: usize) -> f64 {
        let norm = (2.0 / (self.size as f64 + 1.0)).sqrt();
        norm * (PI / (2.0 * self.frames as f64) * (2.0 * t + 1.0) * (k + 1) as f64).cos()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.table[t * self.size..(t + 1) * self.size]
    }

    /// All basis values at `t`; a table row when `t` is a training timestamp.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        if t >= 0.0 && t.fract() == 0.0 && (t as usize) < self.frames {
            self.row(t as usize).to_vec()
        } else {
            (0..self.size).map(|k| self.value(t, k)).collect()
        }
    }
}

/// `v(t) = Σ_k φ_k b_k(t)`. Times past the sequence extrapolate by the same formula.
pub fn eval_trajectory(coeffs: &[f64], basis: &DctBasis, t: f64) -> f64 {
    dot(coeffs, &basis.weights(t))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Least-squares coefficients for `(t, value)` samples, with the residual norm.
pub fn fit_coefficients_lsq(samples: &[(f64, f64)], basis: &DctBasis) -> Result<(Vec<f64>, f64)> {
    let k = basis.size;
    let a = DMatrix::from_fn(samples.len(), k, |r, c| basis.weights(samples[r].0)[c]);
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = samples.len().max(k) as f64 * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, required: k });
    }
    let phi = svd.solve(&b, tol).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let residual = (&a * &phi - b).norm();
    Ok((phi.iter().copied().collect(), residual))
}

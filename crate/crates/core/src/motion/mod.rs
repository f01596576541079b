//! Time-dependent deformation of canonical Gaussians.
//!
//! A canonical position is normalized into the unit box, encoded by three
//! feature planes, and mapped by a small network to per-axis trajectory
//! coefficients. Those coefficients weight a cosine basis over time.

mod dct;
mod net;
mod normalize;
mod triplane;

pub use dct::{eval_trajectory, fit_coefficients_lsq, DctBasis};
pub use net::{CoefficientNet, Linear, NetActivations, NetGradients};
pub use normalize::{fit_normalizer, normalize_position, SceneNormalizer};
pub use triplane::{TriplaneEncoder, INIT_RANGE, PLANE_AXES};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{CoefficientSource, TrainConfig, TrajectoryMode};
use crate::error::{Error, Result};
use crate::math::vec3f;
use crate::raster::Overrides;
use crate::scene::GaussianSet;

/// Trajectory rows: Δμ x, y, z then Δq w, x, y, z.
pub const ROWS: usize = 7;

/// Per-Gaussian offsets at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedState {
    pub delta_positions: Vec<[f64; 3]>,
    pub delta_rotations: Vec<[f64; 4]>,
    pub time: f64,
}

impl DeformedState {
    pub fn identity(n: usize, time: f64) -> Self {
        Self {
            delta_positions: vec![[0.0; 3]; n],
            delta_rotations: vec![[0.0; 4]; n],
            time,
        }
    }

    fn from_rows(rows: &[[f64; ROWS]], time: f64) -> Self {
        Self {
            delta_positions: rows.iter().map(|r| [r[0], r[1], r[2]]).collect(),
            delta_rotations: rows.iter().map(|r| [r[3], r[4], r[5], r[6]]).collect(),
            time,
        }
    }

    /// Deformed pose `μ + Δμ` and raw rotation `q + Δq` for the rasterizer.
    pub fn apply(&self, set: &GaussianSet) -> Overrides {
        let mut o = Overrides::from_set(set);
        for i in 0..set.len() {
            for a in 0..3 {
                o.positions[i][a] += self.delta_positions[i][a];
            }
            for a in 0..4 {
                o.rotations[i][a] += self.delta_rotations[i][a];
            }
        }
        o
    }
}

/// Counts coefficient-network activations currently retained for backward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivationCounter {
    pub live: usize,
    pub peak: usize,
}

impl ActivationCounter {
    fn acquire(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    fn release(&mut self, n: usize) {
        self.live -= n;
    }
}

/// Everything [`MotionField::backward`] needs for one batch of Gaussians.
#[derive(Debug)]
pub struct FieldTape {
    pub indices: Vec<usize>,
    points: Vec<Vector3<f64>>,
    canonical: Vec<Vector3<f64>>,
    activations: Vec<NetActivations>,
    weights: Vec<f64>,
}

impl FieldTape {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradients {
    pub planes: [Vec<f64>; 3],
    pub net: NetGradients,
    pub per_gaussian: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub normalizer: SceneNormalizer,
    pub encoder: TriplaneEncoder,
    pub net: CoefficientNet,
    pub basis: DctBasis,
    pub trajectory: TrajectoryMode,
    /// Direct coefficients, `N × 7 × L`, used instead of the network when set.
    pub per_gaussian: Option<Vec<f32>>,
}

impl MotionField {
    /// Field with zero deformation for a sequence of `frames` timestamps.
    pub fn new(config: &TrainConfig, normalizer: SceneNormalizer, frames: usize, gaussians: usize) -> Result<Self> {
        let basis = DctBasis::new(frames, config.basis_size(frames))?;
        let len = match config.trajectory {
            TrajectoryMode::Dct => basis.size,
            TrajectoryMode::PerFrame => frames,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_7469_6f6e);
        let encoder = TriplaneEncoder::new(config.triplane_resolution, config.triplane_channels, rng.random());
        let net = CoefficientNet::new(3 * config.triplane_channels, config.hidden_width, ROWS * len, rng.random());
        let per_gaussian = match config.coefficients {
            CoefficientSource::Network => None,
            CoefficientSource::PerGaussian => Some(vec![0.0; gaussians * ROWS * len]),
        };
        Ok(Self {
            normalizer,
            encoder,
            net,
            basis,
            trajectory: config.trajectory,
            per_gaussian,
        })
    }

    pub fn frames(&self) -> usize {
        self.basis.frames
    }

    /// Coefficients per trajectory row.
    pub fn row_len(&self) -> usize {
        match self.trajectory {
            TrajectoryMode::Dct => self.basis.size,
            TrajectoryMode::PerFrame => self.basis.frames,
        }
    }

    pub fn validate(&self, gaussians: usize) -> Result<()> {
        let len = ROWS * self.row_len();
        if self.net.outputs() != len || self.net.inputs() != self.encoder.feature_len() {
            return Err(Error::ShapeMismatch(format!(
                "network {}→{} does not fit encoder width {} and {len} coefficients",
                self.net.inputs(),
                self.net.outputs(),
                self.encoder.feature_len()
            )));
        }
        if let Some(c) = &self.per_gaussian {
            if c.len() != gaussians * len {
                return Err(Error::ShapeMismatch(format!("{} direct coefficients for {gaussians} Gaussians", c.len())));
            }
        }
        Ok(())
    }

    /// Weight of each coefficient at time `t`.
    pub fn temporal_weights(&self, t: f64) -> Vec<f64> {
        match self.trajectory {
            TrajectoryMode::Dct => self.basis.weights(t),
            TrajectoryMode::PerFrame => {
                // linear interpolation between per-frame offsets, held past the ends
                let n = self.basis.frames;
                let mut w = vec![0.0; n];
                let t = t.clamp(0.0, (n - 1) as f64);
                let i0 = (t.floor() as usize).min(n - 1);
                let f = t - i0 as f64;
                w[i0] += 1.0 - f;
                if f > 0.0 {
                    w[i0 + 1] += f;
                }
                w
            }
        }
    }

    /// Trajectory coefficients of Gaussian `i` at canonical position `mu`, row-major `7 × L`.
    pub fn coefficients(&self, i: usize, mu: &Vector3<f64>) -> Vec<f64> {
        match &self.per_gaussian {
            Some(c) => {
                let len = ROWS * self.row_len();
                c[i * len..(i + 1) * len].iter().map(|&v| v as f64).collect()
            }
            None => self.net.forward(&self.encoder.encode(&self.normalizer.normalize(mu))),
        }
    }

    fn rows(&self, phi: &[f64], weights: &[f64]) -> [f64; ROWS] {
        let len = weights.len();
        std::array::from_fn(|r| dct::dot(&phi[r * len..(r + 1) * len], weights))
    }

    /// Offsets of the listed Gaussians at time `t`, without retaining activations.
    pub fn evaluate(&self, set: &GaussianSet, indices: &[usize], t: f64) -> Vec<[f64; ROWS]> {
        let weights = self.temporal_weights(t);
        let view = self.net.view();
        indices
            .par_iter()
            .map(|&i| {
                let mu = vec3f(&set.positions[i]);
                let phi = match &self.per_gaussian {
                    Some(_) => self.coefficients(i, &mu),
                    None => {
                        let feat = self.encoder.encode(&self.normalizer.normalize(&mu));
                        self.net.forward_with(&view, &feat, None)
                    }
                };
                self.rows(&phi, &weights)
            })
            .collect()
    }

    /// Offsets of every Gaussian at time `t`.
    pub fn deform(&self, set: &GaussianSet, t: f64) -> DeformedState {
        let all: Vec<usize> = (0..set.len()).collect();
        DeformedState::from_rows(&self.evaluate(set, &all, t), t)
    }

    /// Like [`evaluate`](Self::evaluate) but keeps what backward needs.
    pub fn forward_retained(
        &self,
        set: &GaussianSet,
        indices: &[usize],
        t: f64,
        counter: &mut ActivationCounter,
    ) -> (Vec<[f64; ROWS]>, FieldTape) {
        let weights = self.temporal_weights(t);
        let view = self.net.view();
        let canonical: Vec<Vector3<f64>> = indices.iter().map(|&i| vec3f(&set.positions[i])).collect();
        let points: Vec<Vector3<f64>> = canonical.iter().map(|mu| self.normalizer.normalize(mu)).collect();
        let (rows, activations): (Vec<[f64; ROWS]>, Vec<NetActivations>) = match &self.per_gaussian {
            Some(_) => (
                indices
                    .iter()
                    .zip(&canonical)
                    .map(|(&i, mu)| self.rows(&self.coefficients(i, mu), &weights))
                    .collect(),
                Vec::new(),
            ),
            None => points
                .par_iter()
                .map(|p| {
                    let mut acts = None;
                    let phi = self.net.forward_with(&view, &self.encoder.encode(p), Some(&mut acts));
                    (self.rows(&phi, &weights), acts.expect("activations retained"))
                })
                .unzip(),
        };
        counter.acquire(activations.len());
        let tape = FieldTape {
            indices: indices.to_vec(),
            points,
            canonical,
            activations,
            weights,
        };
        (rows, tape)
    }

    pub fn zero_gradients(&self) -> FieldGradients {
        FieldGradients {
            planes: self.encoder.planes.clone().map(|p| vec![0.0; p.len()]),
            net: self.net.zero_gradients(),
            per_gaussian: self.per_gaussian.as_ref().map(|c| vec![0.0; c.len()]),
        }
    }

    /// Accumulates field gradients from per-row upstream gradients and returns
    /// the gradient w.r.t. each taped Gaussian's canonical position.
    pub fn backward(
        &self,
        tape: FieldTape,
        upstream: &[[f64; ROWS]],
        grads: &mut FieldGradients,
        counter: &mut ActivationCounter,
    ) -> Vec<[f64; 3]> {
        let len = tape.weights.len();
        let view = self.net.view();
        let mut d_mu = vec![[0.0; 3]; tape.len()];
        for (j, &i) in tape.indices.iter().enumerate() {
            let g = &upstream[j];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut d_phi = vec![0.0; ROWS * len];
            for r in 0..ROWS {
                for k in 0..len {
                    d_phi[r * len + k] = g[r] * tape.weights[k];
                }
            }
            if let Some(pg) = grads.per_gaussian.as_mut() {
                for (a, b) in pg[i * ROWS * len..(i + 1) * ROWS * len].iter_mut().zip(&d_phi) {
                    *a += b;
                }
                continue;
            }
            let d_feat = self.net.backward_with(&view, &tape.activations[j], &d_phi, &mut grads.net);
            let d_p = self.encoder.encode_backward(&tape.points[j], &d_feat, &mut grads.planes);
            let d = d_p.component_mul(&self.normalizer.derivative(&tape.canonical[j]));
            d_mu[j] = [d.x, d.y, d.z];
        }
        counter.release(tape.activations.len());
        d_mu
    }
}

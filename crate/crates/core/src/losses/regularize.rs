//! Local rigidity and relative-rotation regularizers over a k-nearest-neighbor graph.

use std::num::NonZero;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{quat_conj, quat_mul, quat_normalize, quat_normalize_backward, quat_to_mat, quat_to_mat_backward, quatf, vec3f, Quat};
use crate::motion::DeformedState;
use crate::scene::GaussianSet;

/// Fixed neighbor lists on canonical positions.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    /// Neighbors per node; every node has the same count.
    pub k: usize,
    pub neighbors: Vec<u32>,
    pub weights: Vec<f64>,
}

impl NeighborGraph {
    /// `k` nearest neighbors (fewer if the set is smaller) in index order among
    /// equal distances. Weights are `exp(−falloff · d²)`, floored above zero.
    pub fn build(positions: &[[f32; 3]], k: usize, falloff: f64) -> Self {
        let n = positions.len();
        let k = k.min(n.saturating_sub(1));
        let pts: Vec<[f64; 3]> = positions.iter().map(|p| p.map(f64::from)).collect();
        let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(&pts);
        let lists: Vec<Vec<(u32, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let Some(want) = NonZero::new(k + 1).filter(|_| k > 0) else {
                    return Vec::new();
                };
                let p = vec3f(&positions[i]);
                let mut d: Vec<(f64, u32)> = tree
                    .nearest_n::<SquaredEuclidean>(&pts[i], want)
                    .into_iter()
                    .filter(|nb| nb.item as usize != i)
                    .map(|nb| ((vec3f(&positions[nb.item as usize]) - p).norm_squared(), nb.item))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.truncate(k);
                d.into_iter()
                    .map(|(d2, j)| (j, (-falloff * d2).exp().max(f64::MIN_POSITIVE)))
                    .collect()
            })
            .collect();
        let mut g = Self {
            k,
            neighbors: Vec::with_capacity(n * k),
            weights: Vec::with_capacity(n * k),
        };
        for l in lists {
            for (j, w) in l {
                g.neighbors.push(j);
                g.weights.push(w);
            }
        }
        g
    }

    pub fn nodes(&self) -> usize {
        self.neighbors.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn pair_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}

/// Value of a regularizer and its gradients w.r.t. the deformation offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerGrad {
    pub value: f64,
    pub delta_positions: Vec<[f64; 3]>,
    pub delta_rotations: Vec<[f64; 4]>,
}

struct Pose {
    mu0: Vector3<f64>,
    mu_t: Vector3<f64>,
    q0: Quat,
    raw_t: Quat,
    qt: Quat,
}

fn pose(set: &GaussianSet, state: &DeformedState, i: usize) -> Pose {
    let mu0 = vec3f(&set.positions[i]);
    let d = state.delta_positions[i];
    let q0 = quat_normalize(&quatf(&set.rotations[i]));
    let raw0 = quatf(&set.rotations[i]);
    let dq = state.delta_rotations[i];
    let raw_t = [raw0[0] + dq[0], raw0[1] + dq[1], raw0[2] + dq[2], raw0[3] + dq[3]];
    Pose {
        mu0,
        mu_t: mu0 + Vector3::new(d[0], d[1], d[2]),
        q0,
        raw_t,
        qt: quat_normalize(&raw_t),
    }
}

fn check(set: &GaussianSet, state: &DeformedState, graph: &NeighborGraph) -> Result<()> {
    if graph.pair_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    if graph.nodes() != set.len() || state.delta_positions.len() != set.len() || state.delta_rotations.len() != set.len() {
        return Err(Error::ShapeMismatch(format!(
            "graph over {} nodes, {} Gaussians, {} offsets",
            graph.nodes(),
            set.len(),
            state.delta_positions.len()
        )));
    }
    Ok(())
}

fn anchor_list(n: usize, anchors: Option<&[usize]>) -> Vec<usize> {
    anchors.map_or_else(|| (0..n).collect(), <[usize]>::to_vec)
}

/// Mean over pairs of `w_ij ‖(μ_j,t − μ_i,t) − R_i,t R_i,0ᵀ (μ_j,0 − μ_i,0)‖`.
pub fn rigidity_loss(set: &GaussianSet, state: &DeformedState, graph: &NeighborGraph) -> Result<f64> {
    Ok(rigidity_loss_grad(set, state, graph, None)?.value)
}

/// Rigidity over pairs anchored at `anchors` (all nodes when `None`). The
/// canonical pose is held constant.
pub fn rigidity_loss_grad(
    set: &GaussianSet,
    state: &DeformedState,
    graph: &NeighborGraph,
    anchors: Option<&[usize]>,
) -> Result<RegularizerGrad> {
    check(set, state, graph)?;
    let n = set.len();
    let anchors = anchor_list(n, anchors);
    let mut out = RegularizerGrad {
        value: 0.0,
        delta_positions: vec![[0.0; 3]; n],
        delta_rotations: vec![[0.0; 4]; n],
    };
    if anchors.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / (anchors.len() * graph.k) as f64;
    for &i in &anchors {
        let pi = pose(set, state, i);
        let r_rel = quat_to_mat(&pi.qt) * quat_to_mat(&pi.q0).transpose();
        let r0t = quat_to_mat(&pi.q0).transpose();
        let mut g_rt = Matrix3::zeros();
        for (&j, &w) in graph.neighbors_of(i).iter().zip(&graph.weights[i * graph.k..(i + 1) * graph.k]) {
            let j = j as usize;
            let pj = pose(set, state, j);
            let d0 = pj.mu0 - pi.mu0;
            let r = (pj.mu_t - pi.mu_t) - r_rel * d0;
            let norm = r.norm();
            out.value += scale * w * norm;
            if norm == 0.0 {
                continue;
            }
            let u = r * (scale * w / norm);
            for a in 0..3 {
                out.delta_positions[j][a] += u[a];
                out.delta_positions[i][a] -= u[a];
            }
            g_rt -= u * (r0t * d0).transpose();
        }
        let g_unit = quat_to_mat_backward(&pi.qt, &g_rt);
        let g_raw = quat_normalize_backward(&pi.raw_t, &g_unit);
        for a in 0..4 {
            out.delta_rotations[i][a] += g_raw[a];
        }
    }
    Ok(out)
}

/// Mean over pairs of `w_ij ‖q̂_j,t ⊗ q̂_j,0⁻¹ − q̂_i,t ⊗ q̂_i,0⁻¹‖`.
pub fn rotation_similarity_loss(set: &GaussianSet, state: &DeformedState, graph: &NeighborGraph) -> Result<f64> {
    Ok(rotation_similarity_loss_grad(set, state, graph, None)?.value)
}

pub fn rotation_similarity_loss_grad(
    set: &GaussianSet,
    state: &DeformedState,
    graph: &NeighborGraph,
    anchors: Option<&[usize]>,
) -> Result<RegularizerGrad> {
    check(set, state, graph)?;
    let n = set.len();
    let anchors = anchor_list(n, anchors);
    let mut out = RegularizerGrad {
        value: 0.0,
        delta_positions: vec![[0.0; 3]; n],
        delta_rotations: vec![[0.0; 4]; n],
    };
    if anchors.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / (anchors.len() * graph.k) as f64;
    let relative = |p: &Pose| quat_mul(&p.qt, &quat_conj(&p.q0));
    // d(q ⊗ c)/dq is linear in q: column a is e_a ⊗ c
    let pull = |p: &Pose, g_u: &Quat| -> Quat {
        let c = quat_conj(&p.q0);
        let mut g_q = [0.0; 4];
        for (a, gq) in g_q.iter_mut().enumerate() {
            let mut e = [0.0; 4];
            e[a] = 1.0;
            let col = quat_mul(&e, &c);
            *gq = (0..4).map(|b| g_u[b] * col[b]).sum();
        }
        quat_normalize_backward(&p.raw_t, &g_q)
    };
    for &i in &anchors {
        let pi = pose(set, state, i);
        let ui = relative(&pi);
        for (&j, &w) in graph.neighbors_of(i).iter().zip(&graph.weights[i * graph.k..(i + 1) * graph.k]) {
            let j = j as usize;
            let pj = pose(set, state, j);
            let uj = relative(&pj);
            let d = [uj[0] - ui[0], uj[1] - ui[1], uj[2] - ui[2], uj[3] - ui[3]];
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.value += scale * w * norm;
            if norm == 0.0 {
                continue;
            }
            let g = d.map(|v| v * scale * w / norm);
            let gj = pull(&pj, &g);
            let gi = pull(&pi, &g.map(|v| -v));
            for a in 0..4 {
                out.delta_rotations[j][a] += gj[a];
                out.delta_rotations[i][a] += gi[a];
            }
        }
    }
    Ok(out)
}

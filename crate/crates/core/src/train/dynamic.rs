use super::adam::{Adam, GaussianOptimizer, LearningRates};
use super::{non_finite, scene_extent, FrameSampler, LogRow};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{photometric_loss_grad, psnr_masked, rigidity_loss_grad, rotation_similarity_loss_grad, NeighborGraph};
use crate::math::{quatf, vec3f};
use crate::motion::{ActivationCounter, FieldGradients, MotionField, ROWS};
use crate::raster::{render, render_backward, Gradients, RenderOutput};
use crate::scene::{Camera, Dataset, GaussianSet, Image};

const FIELD_EPS: f64 = 1e-8;

/// Moments for every trainable array of a [`MotionField`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOptimizer {
    pub planes: [Adam; 3],
    pub weights: [Adam; 3],
    pub biases: [Adam; 3],
    pub per_gaussian: Option<Adam>,
}

impl FieldOptimizer {
    pub fn new(field: &MotionField) -> Self {
        Self {
            planes: field.encoder.planes.clone().map(|p| Adam::new(p.len(), FIELD_EPS)),
            weights: field.net.layers.clone().map(|l| Adam::new(l.weight.len(), FIELD_EPS)),
            biases: field.net.layers.clone().map(|l| Adam::new(l.bias.len(), FIELD_EPS)),
            per_gaussian: field.per_gaussian.as_ref().map(|c| Adam::new(c.len(), FIELD_EPS)),
        }
    }

    pub fn step(&mut self, field: &mut MotionField, g: &FieldGradients, lr_planes: f64, lr_net: f64) {
        if let (Some(opt), Some(c), Some(gc)) = (self.per_gaussian.as_mut(), field.per_gaussian.as_mut(), g.per_gaussian.as_ref()) {
            opt.update(c, gc, lr_planes);
            return;
        }
        for k in 0..3 {
            self.planes[k].update(&mut field.encoder.planes[k], &g.planes[k], lr_planes);
            self.weights[k].update(&mut field.net.layers[k].weight, &g.net.weight[k], lr_net);
            self.biases[k].update(&mut field.net.layers[k].bias, &g.net.bias[k], lr_net);
        }
    }
}

/// Result of one memory-bounded training step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// First-pass render.
    pub render: RenderOutput,
    pub loss: f64,
    pub photometric: f64,
    pub rigidity: f64,
    pub rotation: f64,
    /// Gradients w.r.t. the canonical Gaussian parameters.
    pub gaussian_grads: Gradients,
    pub field_grads: FieldGradients,
    /// Sorted Gaussians that reached a pixel in the first pass.
    pub contributors: Vec<usize>,
    /// Contributors plus their graph neighbors: every Gaussian with a nonzero gradient.
    pub involved: Vec<usize>,
    pub chunks: usize,
}

/// Two-pass step at time `t`.
///
/// Pass one deforms every Gaussian without retaining activations and renders.
/// Pass two walks the involved Gaussians in chunks of `config.chunk_size`; each
/// chunk is re-deformed with retention, composed with the first-pass values of
/// everyone else, rendered and back-propagated, and its activations are
/// released before the next chunk. Regularizers cover pairs anchored at the
/// contributors.
#[allow(clippy::too_many_arguments)]
pub fn two_pass_step(
    set: &GaussianSet,
    field: &MotionField,
    graph: Option<&NeighborGraph>,
    camera: &Camera,
    target: &Image,
    t: f64,
    config: &TrainConfig,
    counter: &mut ActivationCounter,
) -> Result<StepOutput> {
    if config.chunk_size < 1 {
        return Err(Error::Config("chunk_size must be at least 1".into()));
    }
    let n = set.len();
    let first = field.deform(set, t);
    let overrides = first.apply(set);
    let out = render(set, camera, Some(&overrides), config.background);
    let contributors = out.contributors.unique_indices();
    let (photometric, pass1_grad) = photometric_loss_grad(&out.image(), target, config.lambda_ssim)?;

    let mut reg_pos = vec![[0.0; 3]; n];
    let mut reg_rot = vec![[0.0; 4]; n];
    let (mut rigidity, mut rotation) = (0.0, 0.0);
    let mut involved = contributors.clone();
    if let Some(graph) = graph.filter(|g| g.pair_count() > 0) {
        for (lambda, grad_fn, value) in [
            (config.lambda_rigid, rigidity_loss_grad as RegFn, &mut rigidity),
            (config.lambda_rot, rotation_similarity_loss_grad as RegFn, &mut rotation),
        ] {
            if lambda == 0.0 {
                continue;
            }
            let r = grad_fn(set, &first, graph, Some(&contributors))?;
            *value = r.value;
            for i in 0..n {
                for a in 0..3 {
                    reg_pos[i][a] += lambda * r.delta_positions[i][a];
                }
                for a in 0..4 {
                    reg_rot[i][a] += lambda * r.delta_rotations[i][a];
                }
            }
        }
        if config.lambda_rigid != 0.0 || config.lambda_rot != 0.0 {
            let mut mark = vec![false; n];
            for &i in &contributors {
                mark[i] = true;
                for &j in graph.neighbors_of(i) {
                    mark[j as usize] = true;
                }
            }
            involved = (0..n).filter(|&i| mark[i]).collect();
        }
    }
    let loss = photometric + config.lambda_rigid * rigidity + config.lambda_rot * rotation;

    let mut gaussian_grads = Gradients::zeros(n, set.color_stride());
    let mut field_grads = field.zero_gradients();
    let stride = set.color_stride();
    let mut chunks = 0;
    for chunk in involved.chunks(config.chunk_size) {
        chunks += 1;
        let (rows, tape) = field.forward_retained(set, chunk, t, counter);
        let mut composed = overrides.clone();
        for (j, &i) in chunk.iter().enumerate() {
            let mu = vec3f(&set.positions[i]);
            let q = quatf(&set.rotations[i]);
            composed.positions[i] = [mu.x + rows[j][0], mu.y + rows[j][1], mu.z + rows[j][2]];
            composed.rotations[i] = [q[0] + rows[j][3], q[1] + rows[j][4], q[2] + rows[j][5], q[3] + rows[j][6]];
        }
        // a single chunk re-derives exactly the pass-1 values, so its frame is the pass-1 frame
        let g = if chunk.len() == involved.len() {
            render_backward(set, camera, Some(&composed), &out, &pass1_grad, None)?
        } else {
            let chunk_out = render(set, camera, Some(&composed), config.background);
            let (_, grad_color) = photometric_loss_grad(&chunk_out.image(), target, config.lambda_ssim)?;
            render_backward(set, camera, Some(&composed), &chunk_out, &grad_color, None)?
        };
        let upstream: Vec<[f64; ROWS]> = chunk
            .iter()
            .map(|&i| {
                let (p, q) = (g.positions[i], g.rotations[i]);
                let (rp, rq) = (reg_pos[i], reg_rot[i]);
                [p[0] + rp[0], p[1] + rp[1], p[2] + rp[2], q[0] + rq[0], q[1] + rq[1], q[2] + rq[2], q[3] + rq[3]]
            })
            .collect();
        let d_mu = field.backward(tape, &upstream, &mut field_grads, counter);
        for (j, &i) in chunk.iter().enumerate() {
            let u = &upstream[j];
            gaussian_grads.positions[i] = [u[0] + d_mu[j][0], u[1] + d_mu[j][1], u[2] + d_mu[j][2]];
            gaussian_grads.rotations[i] = [u[3], u[4], u[5], u[6]];
            gaussian_grads.colors[i * stride..(i + 1) * stride].copy_from_slice(&g.colors[i * stride..(i + 1) * stride]);
            gaussian_grads.mean2d[i] = g.mean2d[i];
        }
    }
    Ok(StepOutput {
        render: out,
        loss,
        photometric,
        rigidity,
        rotation,
        gaussian_grads,
        field_grads,
        contributors,
        involved,
        chunks,
    })
}

type RegFn = fn(&GaussianSet, &crate::motion::DeformedState, &NeighborGraph, Option<&[usize]>) -> Result<crate::losses::RegularizerGrad>;

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicResult {
    pub set: GaussianSet,
    pub field: MotionField,
    pub log: Vec<LogRow>,
    pub losses: Vec<f64>,
    pub peak_activations: usize,
}

pub fn train_dynamic(dataset: &Dataset, set: GaussianSet, field: MotionField, config: &TrainConfig) -> Result<DynamicResult> {
    train_dynamic_from(dataset, set, field, config, 0, config.dynamic_iters)
}

/// Runs iterations `start + 1 ..= stop` of the `dynamic_iters` schedule.
/// Scales, opacities and masks stay fixed; colors train only when
/// `train_colors` is set.
pub fn train_dynamic_from(
    dataset: &Dataset,
    mut set: GaussianSet,
    mut field: MotionField,
    config: &TrainConfig,
    start: usize,
    stop: usize,
) -> Result<DynamicResult> {
    config.validate()?;
    dataset.validate()?;
    set.validate()?;
    field.validate(set.len())?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset has no frames".into()));
    }
    let regularized = config.lambda_rigid != 0.0 || config.lambda_rot != 0.0;
    let extent = scene_extent(&dataset.cameras);
    let scale = config.dynamic_lr_scale;
    let rates = LearningRates {
        position: config.lr_position * extent * scale,
        rotation: config.lr_rotation * scale,
        color: if config.train_colors { config.lr_color * scale } else { 0.0 },
        ..LearningRates::default()
    };
    let sampler = FrameSampler::new(dataset.len(), config.seed, 1);
    let mut gopt = GaussianOptimizer::new(&set);
    let mut fopt = FieldOptimizer::new(&field);
    let mut counter = ActivationCounter::default();
    let mut log = Vec::new();
    let mut losses = Vec::new();

    for it in start + 1..=stop.min(config.dynamic_iters) {
        let f = sampler.frame_at(it);
        let (frame, cam) = (&dataset.frames[f], &dataset.cameras[f]);
        // rebuilt from the current canonical positions so a resumed run sees the same graph
        let graph = regularized.then(|| NeighborGraph::build(&set.positions, config.k_nn, config.rigid_falloff));
        let step = two_pass_step(&set, &field, graph.as_ref(), cam, &frame.image, frame.time_index as f64, config, &mut counter)?;
        if !step.loss.is_finite() {
            return Err(non_finite(it, "dynamic loss", step.loss));
        }
        losses.push(step.loss);
        gopt.step(&mut set, &step.gaussian_grads, &rates);
        fopt.step(&mut field, &step.field_grads, config.lr_planes, config.lr_net);

        if it == start + 1 || (config.log_interval > 0 && it % config.log_interval == 0) || it == stop {
            let o = field.deform(&set, dataset.frames[0].time_index as f64).apply(&set);
            let mut img = render(&set, &dataset.cameras[0], Some(&o), config.background).image();
            img.clamp01();
            let row = LogRow {
                stage: "dynamic",
                iteration: it,
                loss: step.loss,
                photometric: step.photometric,
                rigidity: step.rigidity,
                rotation: step.rotation,
                gaussians: set.len(),
                probe_psnr: psnr_masked(&img.data, &dataset.frames[0].image.data, None),
                ..LogRow::default()
            };
            log::info!("dynamic {it}: loss {:.5} probe {:.2} dB", step.loss, row.probe_psnr);
            log.push(row);
        }
    }
    Ok(DynamicResult {
        set,
        field,
        log,
        losses,
        peak_activations: counter.peak,
    })
}

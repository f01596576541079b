use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{GaussianOptimizer, LearningRates};
use super::densify::{densify, prune_by_mask, reset_opacity, DensifyStats};
use super::{non_finite, scene_extent, FrameSampler, LogRow};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{depth_loss, mask_loss, photometric_loss_grad, psnr_masked};
use crate::raster::{render, render_backward};
use crate::scene::{Dataset, GaussianSet};

#[derive(Clone, Debug, PartialEq)]
pub struct StaticResult {
    pub set: GaussianSet,
    pub log: Vec<LogRow>,
    /// Total loss at every iteration run.
    pub losses: Vec<f64>,
}

/// Position rate decays log-linearly to 1% of its start over the stage.
fn static_rates(config: &TrainConfig, extent: f64, iteration: usize) -> LearningRates {
    let progress = iteration as f64 / config.static_iters.max(1) as f64;
    LearningRates {
        position: config.lr_position * extent * 0.01f64.powf(progress.min(1.0)),
        rotation: config.lr_rotation,
        log_scale: config.lr_scale,
        opacity: config.lr_opacity,
        color: config.lr_color,
        mask: config.lr_mask,
    }
}

pub fn train_static(dataset: &Dataset, set: GaussianSet, config: &TrainConfig) -> Result<StaticResult> {
    train_static_from(dataset, set, config, 0, config.static_iters)
}

/// Runs iterations `start + 1 ..= stop` of the `static_iters` schedule on `set`.
/// Optimizer moments and densification statistics start fresh.
pub fn train_static_from(
    dataset: &Dataset,
    mut set: GaussianSet,
    config: &TrainConfig,
    start: usize,
    stop: usize,
) -> Result<StaticResult> {
    config.validate()?;
    dataset.validate()?;
    set.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset has no frames".into()));
    }
    let extent = scene_extent(&dataset.cameras);
    let split_size = config.split_size_fraction * extent;
    let sampler = FrameSampler::new(dataset.len(), config.seed, 0);
    let mut opt = GaussianOptimizer::new(&set);
    let mut stats = DensifyStats::new(set.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(start as u64);
    let mut log = Vec::new();
    let mut losses = Vec::new();

    for it in start + 1..=stop.min(config.static_iters) {
        let f = sampler.frame_at(it);
        let (frame, cam) = (&dataset.frames[f], &dataset.cameras[f]);
        let out = render(&set, cam, None, config.background);
        let (photo, grad_color) = photometric_loss_grad(&out.image(), &frame.image, config.lambda_ssim)?;
        let mut depth_value = 0.0;
        let mut grad_depth = None;
        if config.lambda_depth > 0.0 {
            if let Some(d) = &frame.depth {
                let dl = depth_loss(&out.depth, &d.data, &d.valid_mask())?;
                depth_value = dl.value;
                grad_depth = Some(dl.grad.iter().map(|g| g * config.lambda_depth).collect::<Vec<f64>>());
            }
        }
        let (mask_value, mask_grad) = if config.lambda_mask > 0.0 {
            mask_loss(&set.mask_logits)
        } else {
            (0.0, Vec::new())
        };
        let loss = photo + config.lambda_depth * depth_value + config.lambda_mask * mask_value;
        if !loss.is_finite() {
            return Err(non_finite(it, "static loss", loss));
        }
        losses.push(loss);

        let mut g = render_backward(&set, cam, None, &out, &grad_color, grad_depth.as_deref())?;
        for (gm, m) in g.mask_logits.iter_mut().zip(&mask_grad) {
            *gm += config.lambda_mask * m;
        }
        if it < config.densify_until {
            stats.record(&g, &out.contributors.unique_indices(), cam.width, cam.height);
        }
        opt.step(&mut set, &g, &static_rates(config, extent, it));

        if it < config.densify_until {
            if it > config.densify_from && config.densify_interval > 0 && it % config.densify_interval == 0 {
                let r = densify(&mut set, &mut opt, &mut stats, config.densify_grad_threshold, split_size, &mut rng);
                opt.check_aligned(&set)?;
                log::debug!("iteration {it}: cloned {}, split {}, now {}", r.cloned, r.split, set.len());
            }
            if config.opacity_reset_interval > 0 && it % config.opacity_reset_interval == 0 {
                reset_opacity(&mut set, &mut opt, config.opacity_reset_value);
            }
        } else if config.prune_interval > 0 && it % config.prune_interval == 0 {
            let removed = prune_by_mask(&mut set, &mut opt, &mut stats, config.prune_threshold);
            opt.check_aligned(&set)?;
            if removed > 0 {
                log::debug!("iteration {it}: pruned {removed}, now {}", set.len());
            }
        }

        if it == start + 1 || (config.log_interval > 0 && it % config.log_interval == 0) || it == stop {
            let probe = render(&set, &dataset.cameras[0], None, config.background);
            let mut img = probe.image();
            img.clamp01();
            let row = LogRow {
                stage: "static",
                iteration: it,
                loss,
                photometric: photo,
                depth: depth_value,
                mask: mask_value,
                gaussians: set.len(),
                probe_psnr: psnr_masked(&img.data, &dataset.frames[0].image.data, None),
                ..LogRow::default()
            };
            log::info!("static {it}: loss {loss:.5} N {} probe {:.2} dB", set.len(), row.probe_psnr);
            log.push(row);
        }
    }
    Ok(StaticResult { set, log, losses })
}

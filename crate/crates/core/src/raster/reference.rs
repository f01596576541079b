use super::{prepare, Contribution, Contributors, RenderOutput};
use super::{MAX_MAHALANOBIS_SQ, MIN_ALPHA, MIN_TRANSMITTANCE, NEAR_CLIP};
use crate::scene::{Camera, GaussianSet};

/// Untiled oracle for [`render`](super::render).
///
/// Every pixel walks the full, globally depth-sorted Gaussian list. There is
/// no tile binning and no bounding-radius culling; the only per-pixel tests
/// are the shared compositing rules (3σ footprint, minimum alpha, transmittance
/// cutoff). Cost is `O(N)` per pixel.
pub fn render_reference(set: &GaussianSet, camera: &Camera, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let splats = prepare(set, camera, None);
    let mut order: Vec<usize> = (0..set.len()).filter(|&i| splats[i].depth > NEAR_CLIP).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));

    let mut out = RenderOutput {
        width: w,
        height: h,
        color: vec![0.0; w * h * 3],
        depth: vec![0.0; w * h],
        alpha: vec![0.0; w * h],
        contributors: Contributors {
            offsets: vec![0],
            entries: Vec::new(),
        },
        background,
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut t = 1.0;
            for &i in &order {
                let s = &splats[i];
                let m = s.mahalanobis_sq(x as f64, y as f64);
                if m > MAX_MAHALANOBIS_SQ {
                    continue;
                }
                let a = s.opacity * (-0.5 * m).exp();
                if a < MIN_ALPHA {
                    continue;
                }
                let wgt = t * a;
                out.color[3 * p] += wgt * s.color.x;
                out.color[3 * p + 1] += wgt * s.color.y;
                out.color[3 * p + 2] += wgt * s.color.z;
                out.depth[p] += wgt * s.depth;
                out.contributors.entries.push(Contribution {
                    index: i as u32,
                    alpha: a,
                });
                t *= 1.0 - a;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            for c in 0..3 {
                out.color[3 * p + c] += t * background[c];
            }
            out.alpha[p] = 1.0 - t;
            out.contributors.offsets.push(out.contributors.entries.len());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render, test_scenes};

    #[test]
    fn empty_set_is_background() {
        let cam = test_scenes::camera(32);
        let out = render_reference(&GaussianSet::empty(0), &cam, [0.3, 0.2, 0.1]);
        assert!(out.color.chunks(3).all(|c| c == [0.3, 0.2, 0.1]));
    }

    #[test]
    fn agrees_with_tiled_renderer() {
        for seed in 0..4 {
            let set = test_scenes::random(400, 100 + seed, (seed % 2) as u8);
            let cam = test_scenes::camera(64);
            let a = render(&set, &cam, None, [0.0; 3]);
            let b = render_reference(&set, &cam, [0.0; 3]);
            let dc = a.color.iter().zip(&b.color).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let dd = a.depth.iter().zip(&b.depth).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(dc < 1e-5 && dd < 1e-4, "seed {seed}: color {dc:e} depth {dd:e}");
        }
    }
}

use rayon::prelude::*;

use super::{prepare, Contribution, Contributors, Overrides, RenderOutput, Splat};
use super::{MAX_MAHALANOBIS_SQ, MIN_ALPHA, MIN_TRANSMITTANCE};
use crate::scene::{Camera, GaussianSet};

pub const TILE_SIZE: usize = 16;

pub(crate) struct TileGrid {
    pub tiles_x: usize,
    /// Depth-sorted Gaussian indices per tile, row-major over tiles.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn build(splats: &[Splat], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
        for (i, s) in splats.iter().enumerate() {
            if !s.valid {
                continue;
            }
            let r = s.radius as f64;
            let x0 = (s.mean.x - r).ceil().max(0.0);
            let x1 = (s.mean.x + r).floor().min((width - 1) as f64);
            let y0 = (s.mean.y - r).ceil().max(0.0);
            let y1 = (s.mean.y + r).floor().min((height - 1) as f64);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let (tx0, tx1) = (x0 as usize / TILE_SIZE, x1 as usize / TILE_SIZE);
            let (ty0, ty1) = (y0 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        lists.par_iter_mut().for_each(|list| {
            list.sort_by(|&a, &b| {
                splats[a as usize]
                    .depth
                    .total_cmp(&splats[b as usize].depth)
                    .then(a.cmp(&b))
            })
        });
        Self { tiles_x, lists }
    }

    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE
    }
}

struct PixelResult {
    color: [f64; 3],
    depth: f64,
    transmittance: f64,
    contributions: Vec<Contribution>,
}

fn shade_pixel(px: usize, py: usize, list: &[u32], splats: &[Splat], background: &[f64; 3]) -> PixelResult {
    let (fx, fy) = (px as f64, py as f64);
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut t = 1.0;
    let mut contributions = Vec::new();
    for &gi in list {
        let s = &splats[gi as usize];
        let m = s.mahalanobis_sq(fx, fy);
        if m > MAX_MAHALANOBIS_SQ {
            continue;
        }
        let alpha = s.opacity * (-0.5 * m).exp();
        if alpha < MIN_ALPHA {
            continue;
        }
        let w = t * alpha;
        color[0] += w * s.color.x;
        color[1] += w * s.color.y;
        color[2] += w * s.color.z;
        depth += w * s.depth;
        contributions.push(Contribution { index: gi, alpha });
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for c in 0..3 {
        color[c] += t * background[c];
    }
    PixelResult {
        color,
        depth,
        transmittance: t,
        contributions,
    }
}

/// Tiled front-to-back compositing of `set` seen from `camera`.
///
/// Each 16×16 tile composites its own depth-sorted list; ties in depth break on
/// the Gaussian index so the output is deterministic.
pub fn render(set: &GaussianSet, camera: &Camera, overrides: Option<&Overrides>, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let splats = prepare(set, camera, overrides);
    let grid = TileGrid::build(&splats, w, h);

    // One result row per image row keeps the merge in pixel order.
    let rows: Vec<Vec<PixelResult>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| shade_pixel(x, y, &grid.lists[grid.tile_of(x, y)], &splats, &background))
                .collect()
        })
        .collect();

    let mut out = RenderOutput {
        width: w,
        height: h,
        color: Vec::with_capacity(w * h * 3),
        depth: Vec::with_capacity(w * h),
        alpha: Vec::with_capacity(w * h),
        contributors: Contributors {
            offsets: Vec::with_capacity(w * h + 1),
            entries: Vec::new(),
        },
        background,
    };
    out.contributors.offsets.push(0);
    for px in rows.into_iter().flatten() {
        out.color.extend_from_slice(&px.color);
        out.depth.push(px.depth);
        out.alpha.push(1.0 - px.transmittance);
        out.contributors.entries.extend(px.contributions);
        out.contributors.offsets.push(out.contributors.entries.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{logit, SH_C0};
    use crate::raster::{render_reference, test_scenes};
    use nalgebra::{Matrix3, Vector3};

    fn camera() -> Camera {
        Camera {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            rotation_w2c: Matrix3::identity(),
            translation_w2c: Vector3::zeros(),
            time_index: 0,
        }
    }

    fn push(set: &mut GaussianSet, z: f32, opacity: f64, rgb: [f64; 3]) {
        set.positions.push([0.0, 0.0, z]);
        set.rotations.push([1.0, 0.0, 0.0, 0.0]);
        set.log_scales.push([-2.0; 3]);
        set.opacity_logits.push(logit(opacity) as f32);
        for c in rgb {
            set.colors.push(((c - 0.5) / SH_C0) as f32);
        }
        set.mask_logits.push(5.0);
    }

    fn center(out: &RenderOutput) -> ([f64; 3], f64, f64) {
        let p = 32 * 64 + 32;
        ([out.color[3 * p], out.color[3 * p + 1], out.color[3 * p + 2]], out.depth[p], out.alpha[p])
    }

    #[test]
    fn single_half_opaque_gaussian() {
        let mut s = GaussianSet::empty(0);
        push(&mut s, 2.0, 0.5, [1.0, 0.0, 0.0]);
        let (c, d, a) = center(&render(&s, &camera(), None, [0.0; 3]));
        assert!((c[0] - 0.5).abs() < 1e-6 && c[1].abs() < 1e-6 && c[2].abs() < 1e-6, "{c:?}");
        assert!((a - 0.5).abs() < 1e-7);
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fully_opaque_center_depth() {
        let mut s = GaussianSet::empty(0);
        s.positions.push([0.0, 0.0, 2.0]);
        s.rotations.push([1.0, 0.0, 0.0, 0.0]);
        s.log_scales.push([-2.0; 3]);
        s.opacity_logits.push(40.0);
        s.colors.extend_from_slice(&[0.0; 3]);
        s.mask_logits.push(5.0);
        let (_, d, a) = center(&render(&s, &camera(), None, [0.0; 3]));
        assert_eq!(d, 2.0);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn two_overlapping_gaussians() {
        let mut s = GaussianSet::empty(0);
        // back first: sort must reorder
        push(&mut s, 2.0, 0.5, [0.0, 1.0, 0.0]);
        push(&mut s, 1.0, 0.5, [1.0, 0.0, 0.0]);
        let (c, d, _) = center(&render(&s, &camera(), None, [0.0; 3]));
        // front: 0.5·red; back: 0.5·0.5·green
        assert!((c[0] - 0.5).abs() < 1e-6 && (c[1] - 0.25).abs() < 1e-6 && c[2].abs() < 1e-6);
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn background_fills_uncovered_pixels() {
        let out = render(&GaussianSet::empty(0), &camera(), None, [0.2, 0.4, 0.6]);
        assert!(out.color.chunks(3).all(|c| c == [0.2, 0.4, 0.6]));
        assert!(out.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn deterministic() {
        let set = test_scenes::random(300, 3, 1);
        let cam = test_scenes::camera(64);
        assert_eq!(render(&set, &cam, None, [0.0; 3]), render(&set, &cam, None, [0.0; 3]));
    }

    #[test]
    fn permutation_with_distinct_depths_is_bit_identical() {
        let set = test_scenes::random(200, 11, 0);
        let cam = test_scenes::camera(64);
        let n = set.len();
        let mut perm: Vec<usize> = (0..n).rev().collect();
        perm.rotate_left(37);
        let mut shuffled = GaussianSet::empty(0);
        for &i in &perm {
            shuffled.push(&set, i);
        }
        let a = render(&set, &cam, None, [0.0; 3]);
        let b = render(&shuffled, &cam, None, [0.0; 3]);
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn alpha_monotone_in_opacity() {
        let set = test_scenes::random(150, 5, 0);
        let cam = test_scenes::camera(64);
        let base = render(&set, &cam, None, [0.0; 3]);
        for i in [0, 17, 80] {
            let mut bumped = set.clone();
            bumped.opacity_logits[i] += 0.3;
            let out = render(&bumped, &cam, None, [0.0; 3]);
            for (a, b) in base.alpha.iter().zip(&out.alpha) {
                assert!(b + 1e-12 >= *a, "alpha decreased: {a} -> {b}");
            }
        }
    }

    #[test]
    fn single_gaussian_matches_reference_bitwise() {
        let mut s = GaussianSet::empty(0);
        push(&mut s, 2.0, 0.7, [0.3, 0.6, 0.9]);
        s.positions[0] = [0.05, -0.02, 2.0];
        let cam = camera();
        let a = render(&s, &cam, None, [0.1, 0.1, 0.1]);
        let b = render_reference(&s, &cam, [0.1, 0.1, 0.1]);
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
    }
}

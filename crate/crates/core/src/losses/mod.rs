//! Training losses, regularizers and image metrics.

mod regularize;
mod ssim;

pub use regularize::{
    rigidity_loss, rigidity_loss_grad, rotation_similarity_loss, rotation_similarity_loss_grad, NeighborGraph,
    RegularizerGrad,
};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::scene::Image;

pub const PSNR_CAP: f64 = 99.0;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} image vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `(1 − λ) · L1 + λ · (1 − SSIM) / 2`.
pub fn photometric_loss(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<f64> {
    same_shape(rendered, target)?;
    Ok(photometric(&rendered.data, &target.data, rendered.width, rendered.height, lambda_ssim, false).0)
}

/// Photometric loss and its gradient w.r.t. the rendered buffer.
pub fn photometric_loss_grad(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Vec<f64>)> {
    same_shape(rendered, target)?;
    let (v, g) = photometric(&rendered.data, &target.data, rendered.width, rendered.height, lambda_ssim, true);
    Ok((v, g.expect("gradient requested")))
}

fn photometric(a: &[f64], b: &[f64], w: usize, h: usize, lambda: f64, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let n = a.len() as f64;
    let l1 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    let mut grad = want_grad.then(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (1.0 - lambda) * (x - y).signum() * f64::from(x != y) / n)
            .collect::<Vec<f64>>()
    });
    let mut value = (1.0 - lambda) * l1;
    if lambda > 0.0 {
        let (s, gs) = ssim::ssim(a, b, w, h, want_grad);
        value += lambda * (1.0 - s) / 2.0;
        if let (Some(g), Some(gs)) = (grad.as_mut(), gs) {
            for (gi, si) in g.iter_mut().zip(gs) {
                *gi -= lambda * si / 2.0;
            }
        }
    }
    (value, grad)
}

pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    Ok(ssim::ssim(&a.data, &b.data, a.width, a.height, false).0)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP`] for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    Ok(psnr_masked(&a.data, &b.data, None))
}

/// PSNR over pixels where `mask` is set (every pixel when `None`).
pub fn psnr_masked(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, (x, y)) in a.chunks(3).zip(b.chunks(3)).enumerate() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            sum += (x[c] - y[c]).powi(2);
        }
        count += 3;
    }
    if count == 0 {
        return PSNR_CAP;
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    /// Gradient w.r.t. the rendered depth.
    pub grad: Vec<f64>,
    /// Set when no pixel had a valid target; the value is then zero.
    pub empty_mask: bool,
}

/// Mean squared depth error over `mask`.
pub fn depth_loss(rendered: &[f64], target: &[f64], mask: &[bool]) -> Result<DepthLoss> {
    if rendered.len() != target.len() || rendered.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "depth buffers of {}, {} and mask of {}",
            rendered.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut out = DepthLoss {
        value: 0.0,
        grad: vec![0.0; rendered.len()],
        empty_mask: count == 0,
    };
    if count == 0 {
        log::warn!("depth loss: no valid target pixels");
        return Ok(out);
    }
    let n = count as f64;
    for p in 0..rendered.len() {
        if mask[p] {
            let d = rendered[p] - target[p];
            out.value += d * d / n;
            out.grad[p] = 2.0 * d / n;
        }
    }
    Ok(out)
}

/// Mean of the logistic mask values, with its gradient.
pub fn mask_loss(mask_logits: &[f32]) -> (f64, Vec<f64>) {
    let n = mask_logits.len().max(1) as f64;
    let mut value = 0.0;
    let grad = mask_logits
        .iter()
        .map(|&l| {
            let s = sigmoid(l as f64);
            value += s / n;
            s * (1.0 - s) / n
        })
        .collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(w: usize, h: usize, invert: bool) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = ((x + y) % 2 == 1) != invert;
                for c in 0..3 {
                    img.data[3 * (y * w + x) + c] = f64::from(u8::from(v));
                }
            }
        }
        img
    }

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        img
    }

    #[test]
    fn photometric_examples() {
        let a = random(16, 12, 1);
        assert_eq!(photometric_loss(&a, &a, 0.2).unwrap(), 0.0);
        let lo = Image::filled(8, 8, [0.3, 0.5, 0.7]);
        let hi = Image::filled(8, 8, [0.4, 0.6, 0.8]);
        assert!((photometric_loss(&lo, &hi, 0.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(photometric_loss(&lo, &Image::new(4, 4), 0.2).is_err());
    }

    #[test]
    fn checkerboard_against_inverse_fixture() {
        // independent brute-force window evaluation, zero padding
        let v = photometric_loss(&checkerboard(8, 8, false), &checkerboard(8, 8, true), 1.0).unwrap();
        assert!((v - 0.8019146283351485).abs() < 1e-9, "{v}");
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let a = random(12, 11, 2);
        let b = random(12, 11, 3);
        let (_, g) = photometric_loss_grad(&a, &b, 0.2).unwrap();
        for i in [0, 17, 200, 395] {
            let (mut p, mut m) = (a.clone(), a.clone());
            p.data[i] += 1e-7;
            m.data[i] -= 1e-7;
            let fd = (photometric_loss(&p, &b, 0.2).unwrap() - photometric_loss(&m, &b, 0.2).unwrap()) / 2e-7;
            assert!((fd - g[i]).abs() < 1e-3 * fd.abs().max(1e-4), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn depth_examples() {
        let d = vec![1.0, 2.0, 3.0, 4.0];
        let all = vec![true; 4];
        assert_eq!(depth_loss(&d, &d, &all).unwrap().value, 0.0);
        let off: Vec<f64> = d.iter().map(|v| v + 0.5).collect();
        assert!((depth_loss(&off, &d, &all).unwrap().value - 0.25).abs() < 1e-12);
        let half = vec![2.0, 3.0, 3.0, 4.0];
        assert!((depth_loss(&half, &d, &all).unwrap().value - 0.5).abs() < 1e-12);
        let none = depth_loss(&off, &d, &[false; 4]).unwrap();
        assert!(none.empty_mask && none.value == 0.0);
        // masked pixels are ignored entirely
        let l = depth_loss(&[9.0, 2.0], &[1.0, 2.0], &[false, true]).unwrap();
        assert_eq!((l.value, l.grad), (0.0, vec![0.0, 0.0]));
    }

    #[test]
    fn mask_examples() {
        assert!(mask_loss(&[-80.0; 5]).0 < 1e-30);
        assert_eq!(mask_loss(&[0.0; 3]).0, 0.5);
        assert!((mask_loss(&[0.0, 60.0, -60.0]).0 - 0.5).abs() < 1e-12);
        let (_, g) = mask_loss(&[0.3, -1.0]);
        let fd = (mask_loss(&[0.3 + 1e-3, -1.0]).0 - mask_loss(&[0.3 - 1e-3, -1.0]).0) / ((0.3f32 + 1e-3) - (0.3f32 - 1e-3)) as f64;
        assert!((fd - g[0]).abs() < 1e-6);
    }

    #[test]
    fn metric_examples() {
        let a = random(9, 7, 5);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let z = Image::new(4, 4);
        assert!((psnr(&z, &Image::filled(4, 4, [0.1; 3])).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&z, &Image::filled(4, 4, [1.0; 3])).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn photometric_properties(s1 in 0u64..1000, s2 in 0u64..1000, lambda in 0.0f64..1.0) {
            let a = random(11, 9, s1);
            let b = random(11, 9, s2);
            prop_assert_eq!(photometric_loss(&a, &a, lambda).unwrap(), 0.0);
            prop_assert!(photometric_loss(&a, &b, lambda).unwrap() >= 0.0);
            for l in [0.0, 1.0] {
                let d = photometric_loss(&a, &b, l).unwrap() - photometric_loss(&b, &a, l).unwrap();
                prop_assert!(d.abs() < 1e-12);
            }
        }
    }
}

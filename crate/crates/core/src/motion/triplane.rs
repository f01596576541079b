use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis pairs sampled by the three planes: xy, xz, yz.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
pub const INIT_RANGE: f32 = 1e-4;

/// Three axis-aligned feature grids sampled bilinearly and concatenated.
///
/// Each plane is `resolution × resolution × channels`, stored row-major as
/// `[v][u][channel]` where `u` follows the first axis of the pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneEncoder {
    pub resolution: usize,
    pub channels: usize,
    pub planes: [Vec<f32>; 3],
}

/// Bilinear footprint of one plane lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub u0: usize,
    pub u1: usize,
    pub v0: usize,
    pub v1: usize,
    pub fu: f64,
    pub fv: f64,
    /// `d(texel coordinate) / d(normalized coordinate)`, zero where clamped.
    pub du: f64,
    pub dv: f64,
}

impl TriplaneEncoder {
    pub fn new(resolution: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = resolution * resolution * channels;
        let mut plane = || (0..len).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect::<Vec<f32>>();
        Self {
            resolution,
            channels,
            planes: [plane(), plane(), plane()],
        }
    }

    pub fn feature_len(&self) -> usize {
        3 * self.channels
    }

    fn axis(&self, p: f64) -> (usize, usize, f64, f64) {
        let r = self.resolution;
        let raw = (p + 1.0) * 0.5 * r as f64 - 0.5;
        let hi = (r - 1) as f64;
        let u = raw.clamp(0.0, hi);
        let slope = if raw > 0.0 && raw < hi { 0.5 * r as f64 } else { 0.0 };
        let i0 = (u.floor() as usize).min(r - 1);
        let i1 = (i0 + 1).min(r - 1);
        (i0, i1, u - i0 as f64, slope)
    }

    pub(crate) fn taps(&self, p: &Vector3<f64>) -> [Tap; 3] {
        PLANE_AXES.map(|(a, b)| {
            let (u0, u1, fu, du) = self.axis(p[a]);
            let (v0, v1, fv, dv) = self.axis(p[b]);
            Tap {
                u0,
                u1,
                v0,
                v1,
                fu,
                fv,
                du,
                dv,
            }
        })
    }

    #[inline]
    fn texel(&self, v: usize, u: usize) -> usize {
        (v * self.resolution + u) * self.channels
    }

    /// Feature of a point in `[-1, 1]³`: `3 · channels` values, xy then xz then yz.
    pub fn encode(&self, p: &Vector3<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_len()];
        self.encode_into(p, &mut out);
        out
    }

    pub(crate) fn encode_into(&self, p: &Vector3<f64>, out: &mut [f64]) {
        let c = self.channels;
        for (k, tap) in self.taps(p).iter().enumerate() {
            let plane = &self.planes[k];
            let w00 = (1.0 - tap.fu) * (1.0 - tap.fv);
            let w01 = tap.fu * (1.0 - tap.fv);
            let w10 = (1.0 - tap.fu) * tap.fv;
            let w11 = tap.fu * tap.fv;
            let (t00, t01) = (self.texel(tap.v0, tap.u0), self.texel(tap.v0, tap.u1));
            let (t10, t11) = (self.texel(tap.v1, tap.u0), self.texel(tap.v1, tap.u1));
            for ch in 0..c {
                out[k * c + ch] = w00 * plane[t00 + ch] as f64
                    + w01 * plane[t01 + ch] as f64
                    + w10 * plane[t10 + ch] as f64
                    + w11 * plane[t11 + ch] as f64;
            }
        }
    }

    /// Scatters `grad` (w.r.t. the feature) into `plane_grads` and returns the
    /// gradient w.r.t. the normalized point.
    pub(crate) fn encode_backward(
        &self,
        p: &Vector3<f64>,
        grad: &[f64],
        plane_grads: &mut [Vec<f64>; 3],
    ) -> Vector3<f64> {
        let c = self.channels;
        let mut d_p = Vector3::zeros();
        for (k, tap) in self.taps(p).iter().enumerate() {
            let plane = &self.planes[k];
            let pg = &mut plane_grads[k];
            let w00 = (1.0 - tap.fu) * (1.0 - tap.fv);
            let w01 = tap.fu * (1.0 - tap.fv);
            let w10 = (1.0 - tap.fu) * tap.fv;
            let w11 = tap.fu * tap.fv;
            let (t00, t01) = (self.texel(tap.v0, tap.u0), self.texel(tap.v0, tap.u1));
            let (t10, t11) = (self.texel(tap.v1, tap.u0), self.texel(tap.v1, tap.u1));
            let mut d_fu = 0.0;
            let mut d_fv = 0.0;
            for ch in 0..c {
                let g = grad[k * c + ch];
                if g == 0.0 {
                    continue;
                }
                pg[t00 + ch] += g * w00;
                pg[t01 + ch] += g * w01;
                pg[t10 + ch] += g * w10;
                pg[t11 + ch] += g * w11;
                let (p00, p01) = (plane[t00 + ch] as f64, plane[t01 + ch] as f64);
                let (p10, p11) = (plane[t10 + ch] as f64, plane[t11 + ch] as f64);
                d_fu += g * ((1.0 - tap.fv) * (p01 - p00) + tap.fv * (p11 - p10));
                d_fv += g * ((1.0 - tap.fu) * (p10 - p00) + tap.fu * (p11 - p01));
            }
            let (a, b) = PLANE_AXES[k];
            d_p[a] += d_fu * tap.du;
            d_p[b] += d_fv * tap.dv;
        }
        d_p
    }
}

//! Motion-field checkpoints.
//!
//! Little endian throughout:
//!
//! ```text
//! "AMSF"  version:u32
//! Rp Cf K T inputs hidden outputs flags : u32
//! center[3] half_extent[3] margin        : f64
//! planes xy, xz, yz                      : f32, [v][u][ch]
//! per layer: weight (out × in), bias     : f32
//! if flags & PER_GAUSSIAN: count:u64, coefficients : f32
//! ```

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::Vector3;

use crate::config::TrajectoryMode;
use crate::error::{Error, Result};
use crate::motion::{CoefficientNet, DctBasis, Linear, MotionField, SceneNormalizer, TriplaneEncoder};

const MAGIC: &[u8; 4] = b"AMSF";
const VERSION: u32 = 1;
const FLAG_PER_FRAME: u32 = 1;
const FLAG_PER_GAUSSIAN: u32 = 2;

pub fn save_motion_field(field: &MotionField, path: &Path) -> Result<()> {
    let enc = &field.encoder;
    let [l0, l1, l2] = &field.net.layers;
    let mut flags = 0;
    if field.trajectory == TrajectoryMode::PerFrame {
        flags |= FLAG_PER_FRAME;
    }
    if field.per_gaussian.is_some() {
        flags |= FLAG_PER_GAUSSIAN;
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let u32s = |out: &mut Vec<u8>, vals: &[usize]| {
        for &v in vals {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    };
    u32s(&mut out, &[VERSION as usize]);
    u32s(
        &mut out,
        &[
            enc.resolution,
            enc.channels,
            field.basis.size,
            field.basis.frames,
            l0.inputs,
            l0.outputs,
            l2.outputs,
            flags as usize,
        ],
    );
    let n = &field.normalizer;
    for v in n.center.iter().chain(n.half_extent.iter()).chain(std::iter::once(&n.margin)) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f32s = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for p in &enc.planes {
        f32s(p);
    }
    for l in [l0, l1, l2] {
        f32s(&l.weight);
        f32s(&l.bias);
    }
    if let Some(c) = &field.per_gaussian {
        out.extend_from_slice(&(c.len() as u64).to_le_bytes());
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(LittleEndian::read_u32(self.take(4)?) as usize)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        let mut v = vec![0.0; n];
        LittleEndian::read_f32_into(bytes, &mut v);
        Ok(v)
    }
}

pub fn load_motion_field(path: &Path) -> Result<MotionField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::NotMotionField);
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    parse(&bytes[8..]).map_err(|m| Error::format(path, m))
}

fn parse(bytes: &[u8]) -> std::result::Result<MotionField, String> {
    let mut r = Reader { bytes, at: 0 };
    let mut head = [0usize; 8];
    for v in head.iter_mut() {
        *v = r.u32()?;
    }
    let [rp, cf, k, t, inputs, hidden, outputs, flags] = head;
    if flags & !(FLAG_PER_FRAME | FLAG_PER_GAUSSIAN) as usize != 0 {
        return Err(format!("unknown flags {flags:#x}"));
    }
    let mut vals = [0.0; 7];
    for v in vals.iter_mut() {
        *v = r.f64()?;
    }
    let normalizer = SceneNormalizer {
        center: Vector3::new(vals[0], vals[1], vals[2]),
        half_extent: Vector3::new(vals[3], vals[4], vals[5]),
        margin: vals[6],
    };
    let plane_len = rp.checked_mul(rp).and_then(|v| v.checked_mul(cf)).ok_or("size overflow")?;
    let planes = [r.f32s(plane_len)?, r.f32s(plane_len)?, r.f32s(plane_len)?];
    let mut layer = |i: usize, o: usize| -> std::result::Result<Linear, String> {
        Ok(Linear {
            inputs: i,
            outputs: o,
            weight: r.f32s(i.checked_mul(o).ok_or("size overflow")?)?,
            bias: r.f32s(o)?,
        })
    };
    let layers = [layer(inputs, hidden)?, layer(hidden, hidden)?, layer(hidden, outputs)?];
    let per_gaussian = if flags & FLAG_PER_GAUSSIAN as usize != 0 {
        let count = LittleEndian::read_u64(r.take(8)?) as usize;
        Some(r.f32s(count)?)
    } else {
        None
    };
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    let basis = DctBasis::new(t, k).map_err(|e| e.to_string())?;
    let field = MotionField {
        normalizer,
        encoder: TriplaneEncoder {
            resolution: rp,
            channels: cf,
            planes,
        },
        net: CoefficientNet { layers },
        basis,
        trajectory: if flags & FLAG_PER_FRAME as usize != 0 {
            TrajectoryMode::PerFrame
        } else {
            TrajectoryMode::Dct
        },
        per_gaussian,
    };
    if !field.net.outputs().is_multiple_of(crate::motion::ROWS) || field.net.inputs() != field.encoder.feature_len() {
        return Err(format!("layer sizes {inputs}/{hidden}/{outputs} do not fit the encoder"));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CoefficientSource, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(cfg: &TrainConfig) -> MotionField {
        let norm = SceneNormalizer {
            center: Vector3::new(0.1, -0.2, 0.3),
            half_extent: Vector3::new(1.0 / 3.0, 2.0, 5.5),
            margin: 1.05,
        };
        let mut f = MotionField::new(cfg, norm, 12, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in f.net.layers[2].weight.iter_mut() {
            *w = rng.random();
        }
        if let Some(c) = f.per_gaussian.as_mut() {
            c.iter_mut().for_each(|v| *v = rng.random());
        }
        f
    }

    fn small() -> TrainConfig {
        TrainConfig {
            triplane_resolution: 6,
            triplane_channels: 3,
            hidden_width: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.amsf");
        for cfg in [
            small(),
            TrainConfig {
                trajectory: TrajectoryMode::PerFrame,
                coefficients: CoefficientSource::PerGaussian,
                ..small()
            },
        ] {
            let f = field(&cfg);
            save_motion_field(&f, &p).unwrap();
            assert_eq!(load_motion_field(&p).unwrap(), f);
        }
    }

    #[test]
    fn wrong_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.amsf");
        fs::write(&p, b"PLY\n0000").unwrap();
        let e = load_motion_field(&p).unwrap_err();
        assert_eq!(e.to_string(), "not a motion field file");
        save_motion_field(&field(&small()), &p).unwrap();
        let mut b = fs::read(&p).unwrap();
        b[4] = 9;
        fs::write(&p, &b).unwrap();
        assert!(matches!(load_motion_field(&p), Err(Error::UnsupportedVersion(9))));
        b[4] = 1;
        b.truncate(b.len() - 3);
        fs::write(&p, &b).unwrap();
        assert!(load_motion_field(&p).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn header_basis_size_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.amsf");
        let cfg = TrainConfig { k_fraction: 0.5, ..small() };
        let f = field(&cfg);
        assert_ne!(f.basis.size, 3);
        save_motion_field(&f, &p).unwrap();
        assert_eq!(load_motion_field(&p).unwrap().basis.size, 6);
    }
}

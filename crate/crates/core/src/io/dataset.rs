//! Dataset directories:
//!
//! ```text
//! frames/00000.png …   8-bit RGB
//! depth/00000.pfm …    optional, single channel
//! cameras.json         {"T": …, "frames": [{fx, fy, cx, cy, width, height, R, t, time}, …]}
//! points3d.ply         optional
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ply::{load_points, save_points};
use crate::error::{Error, Result};
use crate::scene::{Camera, Dataset, DepthMap, Frame, Image};

/// Largest allowed deviation of `R Rᵀ` from identity.
pub const ROTATION_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    time: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CamerasFile {
    #[serde(rename = "T")]
    total_frames: usize,
    frames: Vec<CameraRecord>,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = c.rotation_w2c;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            r: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            t: [c.translation_w2c.x, c.translation_w2c.y, c.translation_w2c.z],
            time: c.time_index,
        }
    }
}

impl From<&CameraRecord> for Camera {
    fn from(c: &CameraRecord) -> Self {
        Camera {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation_w2c: Matrix3::from_row_slice(&c.r),
            translation_w2c: Vector3::from_column_slice(&c.t),
            time_index: c.time,
        }
    }
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("{i:05}.png"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("depth").join(format!("{i:05}.pfm"))
}

pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, bytes)
        .ok_or_else(|| Error::format(path, "pixel buffer does not match image size"))?;
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    Ok(Image {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Single-channel PFM, little endian, rows stored bottom to top.
pub fn save_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(32 + depth.data.len() * 4);
    let _ = write!(out, "Pf\n{} {}\n-1.0\n", depth.width, depth.height);
    for y in (0..depth.height).rev() {
        for &v in &depth.data[y * depth.width..(y + 1) * depth.width] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    // three whitespace-terminated header tokens
    let mut tokens = Vec::new();
    let mut at = 0;
    while tokens.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad("truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad("PFM header is not text"))?);
    }
    at += 1;
    if tokens[0] != "Pf" {
        return Err(bad("expected a single-channel PFM (Pf)"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad PFM width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad PFM scale"))?;
    let need = width * height * 4;
    let body = bytes.get(at..at + need).ok_or_else(|| bad("PFM body too short"))?;
    let mut data = vec![0.0; width * height];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let v = if scale < 0.0 {
            LittleEndian::read_f32(chunk)
        } else {
            BigEndian::read_f32(chunk)
        };
        let (row, col) = (height - 1 - k / width, k % width);
        data[row * width + col] = v as f64;
    }
    Ok(DepthMap { width, height, data })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let with_depth = dataset.frames.iter().any(|f| f.depth.is_some());
    if with_depth {
        let d = dir.join("depth");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    dataset.frames.par_iter().enumerate().try_for_each(|(i, f)| -> Result<()> {
        save_png(&f.image, &frame_path(dir, i))?;
        if let Some(d) = &f.depth {
            save_pfm(d, &depth_path(dir, i))?;
        }
        Ok(())
    })?;
    let cams = CamerasFile {
        total_frames: dataset.total_frames,
        frames: dataset.cameras.iter().map(CameraRecord::from).collect(),
    };
    let path = dir.join("cameras.json");
    let text = serde_json::to_string_pretty(&cams).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    if !dataset.init_points.is_empty() {
        save_points(&dataset.init_points, &dataset.init_colors, &dir.join("points3d.ply"))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("cameras.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let cams: CamerasFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    let cameras: Vec<Camera> = cams.frames.iter().map(Camera::from).collect();
    for (i, c) in cameras.iter().enumerate() {
        c.validate(ROTATION_TOLERANCE)
            .map_err(|e| Error::format(&path, format!("frame {i}: {e}")))?;
    }
    let frames_dir = dir.join("frames");
    let pngs = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    if pngs != cameras.len() {
        return Err(Error::format(
            &path,
            format!("{} cameras but {pngs} images in {}", cameras.len(), frames_dir.display()),
        ));
    }
    let depth_dir = dir.join("depth");
    let has_depth = depth_dir.is_dir();
    let frames: Vec<Frame> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, c)| -> Result<Frame> {
            let fp = frame_path(dir, i);
            if !fp.exists() {
                return Err(Error::format(&fp, "missing frame; indices must be contiguous from 0"));
            }
            let image = load_png(&fp)?;
            if image.width != c.width || image.height != c.height {
                return Err(Error::format(
                    &fp,
                    format!("image is {}×{}, camera says {}×{}", image.width, image.height, c.width, c.height),
                ));
            }
            let dp = depth_path(dir, i);
            let depth = if has_depth && dp.exists() { Some(load_pfm(&dp)?) } else { None };
            Ok(Frame {
                image,
                depth,
                time_index: c.time_index,
            })
        })
        .collect::<Result<_>>()?;
    let ply = dir.join("points3d.ply");
    let (init_points, init_colors) = if ply.exists() { load_points(&ply)? } else { (Vec::new(), Vec::new()) };
    let dataset = Dataset {
        frames,
        cameras,
        init_points,
        init_colors,
        total_frames: cams.total_frames,
    };
    dataset.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn scene() -> Dataset {
        generate(&SynthSpec {
            foreground: 12,
            background: 20,
            clusters: 2,
            frames: 5,
            active: vec![0],
            width: 20,
            height: 16,
            ..SynthSpec::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn synthetic_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let d = scene();
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn missing_depth_directory_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = scene();
        d.frames.iter_mut().for_each(|f| f.depth = None);
        save_dataset(&d, dir.path()).unwrap();
        assert!(!dir.path().join("depth").exists());
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn bad_rotation_and_count_mismatch_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&scene(), dir.path()).unwrap();
        let path = dir.path().join("cameras.json");
        let mut cams: CamerasFile = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let good = cams.clone();
        cams.frames[2].r[0] += 0.01;
        fs::write(&path, serde_json::to_string(&cams).unwrap()).unwrap();
        let e = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(e.contains("cameras.json") && e.contains("frame 2"), "{e}");

        let mut short = good.clone();
        short.frames.pop();
        fs::write(&path, serde_json::to_string(&short).unwrap()).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("4 cameras but 5 images"));

        fs::remove_file(&path).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("cameras.json"));
    }

    #[test]
    fn pfm_keeps_f32_values_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let d = DepthMap {
            width: 3,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 0.0, 0.1f32 as f64, 6.5],
        };
        save_pfm(&d, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        // bottom row first
        assert_eq!(&bytes[bytes.len() - 12..bytes.len() - 8], &1.0f32.to_le_bytes());
        assert_eq!(load_pfm(&p).unwrap(), d);
    }
}

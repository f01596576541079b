//! Minimal PLY: one `vertex` element, ascii or binary little/big endian on read,
//! binary little endian on write.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::scene::{sh_coeffs, GaussianSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read<B: ByteOrder>(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => B::read_i16(b) as f64,
            Self::U16 => B::read_u16(b) as f64,
            Self::I32 => B::read_i32(b) as f64,
            Self::U32 => B::read_u32(b) as f64,
            Self::F32 => B::read_f32(b) as f64,
            Self::F64 => B::read_f64(b),
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

/// Vertex properties as columns. Every supported scalar type converts to
/// `f64` and back without loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VertexTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub rows: usize,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }
}

pub fn read_vertices(path: &Path) -> Result<VertexTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vertices(&bytes).map_err(|m| Error::format(path, m))
}

fn parse_vertices(bytes: &[u8]) -> std::result::Result<VertexTable, String> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or("missing end_header")?;
    let mut body = end + marker.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err("end_header not followed by a newline".into());
    }
    body += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err("not a PLY file".into());
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(format!("unknown format {other}")),
                })
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count}"))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => return Err("list properties are not supported".into()),
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or("property before any element")?;
                let ty = Scalar::parse(ty).ok_or_else(|| format!("unknown property type {ty}"))?;
                el.properties.push((name.to_string(), ty));
            }
            _ => return Err(format!("unexpected header line `{line}`")),
        }
    }
    let encoding = encoding.ok_or("missing format line")?;
    if elements.first().map(|e| e.name.as_str()) != Some("vertex") {
        return Err("first element must be vertex".into());
    }
    let vertex = &elements[0];
    let width = vertex.properties.len();
    let mut columns = vec![Vec::with_capacity(vertex.count); width];
    let data = &bytes[body..];
    match encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(data).map_err(|_| "body is not UTF-8")?;
            let mut tokens = text.split_whitespace();
            for r in 0..vertex.count {
                for col in columns.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| format!("vertex {r}: too few values"))?;
                    col.push(tok.parse().map_err(|_| format!("vertex {r}: bad value {tok}"))?);
                }
            }
        }
        Encoding::Little | Encoding::Big => {
            let stride: usize = vertex.properties.iter().map(|(_, t)| t.size()).sum();
            if data.len() < stride * vertex.count {
                return Err(format!("body holds {} bytes, need {}", data.len(), stride * vertex.count));
            }
            for r in 0..vertex.count {
                let mut o = r * stride;
                for (c, (_, ty)) in vertex.properties.iter().enumerate() {
                    let b = &data[o..o + ty.size()];
                    columns[c].push(match encoding {
                        Encoding::Little => ty.read::<LittleEndian>(b),
                        _ => ty.read::<BigEndian>(b),
                    });
                    o += ty.size();
                }
            }
        }
    }
    Ok(VertexTable {
        names: vertex.properties.iter().map(|(n, _)| n.clone()).collect(),
        columns,
        rows: vertex.count,
    })
}

/// Writes `columns` (all `float` or all `double`) as binary little endian.
fn write_vertices(path: &Path, names: &[String], columns: &[Vec<f64>], double: bool) -> Result<()> {
    let rows = columns.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let ty = if double { "double" } else { "float" };
    let _ = write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {rows}\n");
    for n in names {
        let _ = writeln!(out, "property {ty} {n}");
    }
    out.extend_from_slice(b"end_header\n");
    let size = if double { 8 } else { 4 };
    out.reserve(rows * columns.len() * size);
    let mut buf = [0u8; 8];
    for r in 0..rows {
        for c in columns {
            if double {
                LittleEndian::write_f64(&mut buf, c[r]);
            } else {
                LittleEndian::write_f32(&mut buf, c[r] as f32);
            }
            out.extend_from_slice(&buf[..size]);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn gaussian_names(degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..3).map(|i| format!("log_scale_{i}")));
    names.push("opacity_logit".into());
    names.push("mask_logit".into());
    names.extend((0..3 * sh_coeffs(degree)).map(|i| format!("sh_{i}")));
    names
}

pub fn save_gaussians(set: &GaussianSet, path: &Path) -> Result<()> {
    set.validate()?;
    let names = gaussian_names(set.sh_degree);
    let stride = set.color_stride();
    let n = set.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    for a in 0..3 {
        columns.push(set.positions.iter().map(|p| p[a] as f64).collect());
    }
    for a in 0..4 {
        columns.push(set.rotations.iter().map(|q| q[a] as f64).collect());
    }
    for a in 0..3 {
        columns.push(set.log_scales.iter().map(|s| s[a] as f64).collect());
    }
    columns.push(set.opacity_logits.iter().map(|&v| v as f64).collect());
    columns.push(set.mask_logits.iter().map(|&v| v as f64).collect());
    for k in 0..stride {
        columns.push((0..n).map(|i| set.colors[i * stride + k] as f64).collect());
    }
    write_vertices(path, &names, &columns, false)
}

pub fn load_gaussians(path: &Path) -> Result<GaussianSet> {
    let table = read_vertices(path)?;
    let sh_count = table.names.iter().filter(|n| n.starts_with("sh_")).count();
    let degree = match sh_count {
        3 => 0,
        12 => 1,
        c => return Err(Error::format(path, format!("unknown property layout: {c} sh_ properties"))),
    };
    let names = gaussian_names(degree);
    for n in &table.names {
        if !names.contains(n) {
            log::warn!("{}: ignoring unknown vertex property {n}", path.display());
        }
    }
    let mut cols = Vec::with_capacity(names.len());
    for n in &names {
        cols.push(
            table
                .column(n)
                .ok_or_else(|| Error::format(path, format!("unknown property layout: missing {n}")))?,
        );
    }
    let f = |c: usize, r: usize| cols[c][r] as f32;
    let rows = table.rows;
    let stride = 3 * sh_coeffs(degree);
    let mut set = GaussianSet::empty(degree);
    for r in 0..rows {
        set.positions.push([f(0, r), f(1, r), f(2, r)]);
        set.rotations.push([f(3, r), f(4, r), f(5, r), f(6, r)]);
        set.log_scales.push([f(7, r), f(8, r), f(9, r)]);
        set.opacity_logits.push(f(10, r));
        set.mask_logits.push(f(11, r));
        set.colors.extend((0..stride).map(|k| f(12 + k, r)));
    }
    Ok(set)
}

/// Writes an initial point cloud with colors in `[0, 1]`.
pub fn save_points(points: &[[f64; 3]], colors: &[[f64; 3]], path: &Path) -> Result<()> {
    let names: Vec<String> = ["x", "y", "z", "red", "green", "blue"].iter().map(|s| s.to_string()).collect();
    let columns: Vec<Vec<f64>> = (0..6)
        .map(|c| {
            if c < 3 {
                points.iter().map(|p| p[c]).collect()
            } else {
                colors.iter().map(|p| p[c - 3]).collect()
            }
        })
        .collect();
    write_vertices(path, &names, &columns, true)
}

/// Reads `x, y, z` and optional `red, green, blue`. Integer colors are scaled
/// from `0..=255`; missing colors default to mid gray.
pub fn load_points(path: &Path) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = parse_vertices(&bytes).map_err(|m| Error::format(path, m))?;
    let axis = |n: &str| table.column(n).ok_or_else(|| Error::format(path, format!("missing vertex property {n}")));
    let (x, y, z) = (axis("x")?, axis("y")?, axis("z")?);
    let points = (0..table.rows).map(|r| [x[r], y[r], z[r]]).collect();
    let integer_colors = header_says_integer_colors(&bytes);
    let colors = match (table.column("red"), table.column("green"), table.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let s = if integer_colors { 1.0 / 255.0 } else { 1.0 };
            (0..table.rows).map(|i| [r[i] * s, g[i] * s, b[i] * s]).collect()
        }
        _ => vec![[0.5; 3]; table.rows],
    };
    Ok((points, colors))
}

fn header_says_integer_colors(bytes: &[u8]) -> bool {
    let head = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
    head.lines().any(|l| {
        let w: Vec<&str> = l.split_whitespace().collect();
        matches!(w.as_slice(), ["property", ty, "red"] if !matches!(*ty, "float" | "float32" | "double" | "float64"))
    })
}

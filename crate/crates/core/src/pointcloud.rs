//! Unoriented point clouds: loading, normalization into `[-1, 1]³`, and the
//! density-compensating weights used to approximate the mean surface measure.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spatial::SpatialHash;
use crate::{Error, Result, Vec3};

/// Minimum number of points a loaded cloud must have.
pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
    ObjVertices,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" | "pts" => Some(Self::Xyz),
            "ply" => Some(Self::Ply),
            "obj" => Some(Self::ObjVertices),
            _ => None,
        }
    }
}

/// Isotropic scale followed by a translation: `p ↦ scale·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Default for NormalizationTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl NormalizationTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }

    pub fn inverse(&self, q: &Vec3) -> Vec3 {
        (q - Vec3::from(self.translation)) / self.scale
    }

    pub fn inverted(&self) -> Self {
        let t = -Vec3::from(self.translation) / self.scale;
        Self {
            scale: 1.0 / self.scale,
            translation: [t.x, t.y, t.z],
        }
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Self) -> Self {
        let t = Vec3::from(inner.translation) * self.scale + Vec3::from(self.translation);
        Self {
            scale: self.scale * inner.scale,
            translation: [t.x, t.y, t.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Mollifier radius used for the weights; `None` until weights are adapted.
    pub epsilon: Option<f64>,
    /// Maps original coordinates to the current ones.
    pub transform: NormalizationTransform,
}

impl PointCloud {
    /// Cloud with uniform weights `1/N`.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewPoints {
                found: 0,
                required: 1,
            });
        }
        if let Some(p) = points.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {p:?}")));
        }
        let n = points.len();
        Ok(Self {
            points,
            weights: vec![1.0 / n as f64; n],
            epsilon: None,
            transform: NormalizationTransform::IDENTITY,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let format = CloudFormat::from_path(path).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown point cloud extension: {}", path.display()))
        })?;
        Self::load_as(path, format)
    }

    pub fn load_as(path: &Path, format: CloudFormat) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let name = path.display().to_string();
        let points = match format {
            CloudFormat::Xyz => parse_xyz(&fs::read_to_string(path)?, &name)?,
            CloudFormat::ObjVertices => parse_obj_vertices(&fs::read_to_string(path)?, &name)?,
            CloudFormat::Ply => parse_ply(&fs::read(path)?, &name)?,
        };
        if points.len() < MIN_POINTS {
            return Err(Error::TooFewPoints {
                found: points.len(),
                required: MIN_POINTS,
            });
        }
        Self::new(points)
    }

    pub fn write_xyz(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for p in &self.points {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Maps the cloud isotropically so that its bounding box is centered at
    /// the origin with largest half-extent exactly 1.
    pub fn normalize_to_domain(&self) -> Result<Self> {
        let (lo, hi) = self.bounding_box();
        let half = (hi - lo).max() / 2.0;
        if !(half > 0.0) {
            return Err(Error::DegenerateCloud);
        }
        let center = (lo + hi) / 2.0;
        let step = NormalizationTransform {
            scale: 1.0 / half,
            translation: [-center.x / half, -center.y / half, -center.z / half],
        };
        Ok(Self {
            points: self.points.iter().map(|p| step.apply(p)).collect(),
            weights: self.weights.clone(),
            epsilon: self.epsilon.map(|e| e * step.scale),
            transform: step.compose(&self.transform),
        })
    }

    /// Smallest mollifier radius such that every point has at least `k`
    /// other points within it: the maximum k-th-nearest-neighbor distance,
    /// times a 1.05 safety factor.
    pub fn select_epsilon(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Ok(f64::MIN_POSITIVE);
        }
        let n = self.points.len();
        if n <= k {
            return Err(Error::TooFewPoints {
                found: n,
                required: k + 1,
            });
        }
        let (lo, hi) = self.bounding_box();
        let ext = hi - lo;
        let volume = ext.iter().map(|e| e.max(ext.max() * 1e-3)).product::<f64>();
        let cell = (volume * k as f64 / n as f64).cbrt().max(1e-9);
        let hash = SpatialHash::new(&self.points, cell);
        let max_kth = (0..n)
            .into_par_iter()
            .map(|i| hash.kth_neighbor_distance(i, k).expect("n > k"))
            .reduce(|| 0.0, f64::max);
        Ok((max_kth * 1.05).max(f64::MIN_POSITIVE))
    }

    /// Density-adapted weights `ω_i ∝ (Σ_j ν_ε(x_i − x_j))⁻¹`, self term
    /// included, normalized to sum to one.
    pub fn compute_adaptive_weights(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        let hash = SpatialHash::new(&self.points, epsilon);
        let raw: Vec<f64> = self
            .points
            .par_iter()
            .map(|p| {
                let mut density = 0.0;
                hash.for_each_within(p, epsilon, |_, d| density += mollifier(d, epsilon));
                1.0 / density
            })
            .collect();
        Ok(self.with_raw_weights(raw, epsilon))
    }

    /// O(N²) reference for [`compute_adaptive_weights`](Self::compute_adaptive_weights).
    pub fn compute_adaptive_weights_brute_force(&self, epsilon: f64) -> Self {
        let raw: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let density: f64 = self.points.iter().map(|q| mollifier((p - q).norm(), epsilon)).sum();
                1.0 / density
            })
            .collect();
        self.with_raw_weights(raw, epsilon)
    }

    fn with_raw_weights(&self, raw: Vec<f64>, epsilon: f64) -> Self {
        let total: f64 = raw.iter().sum();
        Self {
            points: self.points.clone(),
            weights: raw.iter().map(|w| w / total).collect(),
            epsilon: Some(epsilon),
            transform: self.transform,
        }
    }

    /// `select_epsilon(k)` followed by `compute_adaptive_weights`.
    pub fn with_adaptive_weights(&self, k: usize) -> Result<Self> {
        let eps = self.select_epsilon(k)?;
        self.compute_adaptive_weights(eps)
    }

    /// Median distance to the nearest other point.
    pub fn median_spacing(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        let cell = ((hi - lo).max() / (self.points.len() as f64).cbrt()).max(1e-9);
        let hash = SpatialHash::new(&self.points, cell);
        let mut d: Vec<f64> = (0..self.points.len())
            .into_par_iter()
            .map(|i| hash.kth_neighbor_distance(i, 1).unwrap_or(0.0))
            .collect();
        d.sort_unstable_by(f64::total_cmp);
        d[(d.len() - 1) / 2]
    }
}

/// Scaled bump `ν_ε(s) = ε⁻³ exp(1/(|s/ε|² − 1))` for `|s| < ε`, else 0.
pub fn mollifier(distance: f64, epsilon: f64) -> f64 {
    let r = distance / epsilon;
    if r >= 1.0 {
        return 0.0;
    }
    (1.0 / (r * r - 1.0)).exp() / (epsilon * epsilon * epsilon)
}

fn parse_floats(line: &str) -> Option<Vec<f64>> {
    line.split_whitespace().map(|t| t.parse::<f64>().ok()).collect()
}

fn parse_xyz(text: &str, name: &str) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = parse_floats(line).filter(|v| v.len() >= 3).ok_or_else(|| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            message: format!("expected at least three numbers, got {line:?}"),
        })?;
        points.push(Vec3::new(values[0], values[1], values[2]));
    }
    Ok(points)
}

fn parse_obj_vertices(text: &str, name: &str) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("v") {
            continue;
        }
        let rest: Vec<&str> = tokens.collect();
        let values: Option<Vec<f64>> = rest.iter().map(|t| t.parse().ok()).collect();
        match values {
            Some(v) if v.len() >= 3 => points.push(Vec3::new(v[0], v[1], v[2])),
            _ => {
                return Err(Error::Parse {
                    path: name.to_string(),
                    line: i + 1,
                    message: format!("malformed vertex line {line:?}"),
                })
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

struct PlyElement {
    name: String,
    count: usize,
    /// `(property name, scalar type)`; `None` type marks a list property.
    properties: Vec<(String, Option<PlyScalar>)>,
}

fn parse_ply(bytes: &[u8], name: &str) -> Result<Vec<Vec3>> {
    let err = |line: usize, message: String| Error::Parse {
        path: name.to_string(),
        line,
        message,
    };
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| err(1, "missing end_header".into()))?;
    let mut body_start = header_end + 10;
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| err(1, e.to_string()))?;

    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(err(i + 1, format!("unsupported PLY format {other}"))),
            ["element", el, count] => elements.push(PlyElement {
                name: el.to_string(),
                count: count.parse().map_err(|_| err(i + 1, format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, prop] => elements
                .last_mut()
                .ok_or_else(|| err(i + 1, "property before element".into()))?
                .properties
                .push((prop.to_string(), None)),
            ["property", ty, prop] => {
                let ty = PlyScalar::parse(ty).ok_or_else(|| err(i + 1, format!("unknown type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(i + 1, "property before element".into()))?
                    .properties
                    .push((prop.to_string(), Some(ty)));
            }
            _ => return Err(err(i + 1, format!("unrecognized header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| err(1, "missing format line".into()))?;
    let header_lines = header.lines().count() + 1;

    for el in &elements {
        if el.name != "vertex" {
            log::warn!("{name}: ignoring PLY element '{}'", el.name);
        }
    }
    let vertex_index = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(1, "no vertex element".into()))?;
    let vertex = &elements[vertex_index];
    let column = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|(n, _)| n == axis)
            .ok_or_else(|| err(1, format!("vertex element lacks property {axis}")))
    };
    let cols = [column("x")?, column("y")?, column("z")?];

    let mut points = Vec::with_capacity(vertex.count);
    if binary {
        let mut offset = body_start;
        for el in &elements[..vertex_index] {
            if el.count > 0 && el.properties.iter().any(|(_, t)| t.is_none()) {
                return Err(err(1, format!("cannot skip list element '{}' preceding vertices", el.name)));
            }
            let stride: usize = el.properties.iter().map(|(_, t)| t.expect("scalar").size()).sum();
            offset += stride * el.count;
        }
        if vertex.properties.iter().any(|(_, t)| t.is_none()) {
            return Err(err(1, "list properties on vertices are not supported".into()));
        }
        let sizes: Vec<usize> = vertex.properties.iter().map(|(_, t)| t.expect("scalar").size()).collect();
        let starts: Vec<usize> = sizes.iter().scan(0, |acc, s| {
            let start = *acc;
            *acc += s;
            Some(start)
        }).collect();
        let stride: usize = sizes.iter().sum();
        for v in 0..vertex.count {
            let base = offset + v * stride;
            if base + stride > bytes.len() {
                return Err(err(header_lines, format!("binary body truncated at vertex {v}")));
            }
            let read = |c: usize| {
                let ty = vertex.properties[c].1.expect("scalar");
                ty.read_le(&bytes[base + starts[c]..base + starts[c] + ty.size()])
            };
            points.push(Vec3::new(read(cols[0]), read(cols[1]), read(cols[2])));
        }
    } else {
        let body = std::str::from_utf8(&bytes[body_start.min(bytes.len())..]).map_err(|e| err(header_lines, e.to_string()))?;
        let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        for el in &elements[..vertex_index] {
            for _ in 0..el.count {
                lines.next();
            }
        }
        for v in 0..vertex.count {
            let (i, line) = lines
                .next()
                .ok_or_else(|| err(header_lines, format!("body ends before vertex {v}")))?;
            let values = parse_floats(line)
                .filter(|vals| vals.len() >= vertex.properties.len())
                .ok_or_else(|| err(header_lines + i + 1, format!("malformed vertex line {line:?}")))?;
            points.push(Vec3::new(values[cols[0]], values[cols[1]], values[cols[2]]));
        }
    }
    Ok(points)
}

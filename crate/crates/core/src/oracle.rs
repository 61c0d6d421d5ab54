//! Independent ground truths: closed-form shapes with exact samplers, and a
//! finite-volume backward-Euler heat step on a regular grid.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{FieldSample, ScalarField};
use crate::mesh::TriMesh;
use crate::pointcloud::PointCloud;
use crate::sampling::stream_rng;
use crate::surface::marching_cubes;
use crate::{Error, Result, Vec3, DOMAIN_HALF_EXTENT};

const FD_STEP: f64 = 1e-6;

/// Closed-form signed distance fields. Coordinates are stored as arrays so
/// the shape serializes into run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnalyticShape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Ring in the `xy` plane around the `z` axis.
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
    },
    /// Arc of a torus: the tube follows the circle of radius `major` in the
    /// `xy` plane for polar angles within `half_angle` of the `+y` axis and
    /// ends in round caps.
    CappedTorus {
        center: [f64; 3],
        half_angle: f64,
        major: f64,
        minor: f64,
    },
    /// `{n·x = offset}` with unit `n`; sampled on the patch inside `[−0.8, 0.8]`
    /// around the foot point of the origin.
    Plane {
        normal: [f64; 3],
        offset: f64,
    },
}

impl AnalyticShape {
    pub fn sphere() -> Self {
        Self::Sphere {
            center: [0.0; 3],
            radius: 0.5,
        }
    }

    pub fn cube() -> Self {
        Self::Box {
            center: [0.0; 3],
            half_extents: [0.4; 3],
        }
    }

    pub fn torus() -> Self {
        Self::Torus {
            center: [0.0; 3],
            major: 0.5,
            minor: 0.2,
        }
    }

    pub fn capped_torus() -> Self {
        Self::CappedTorus {
            center: [0.0; 3],
            half_angle: 2.2,
            major: 0.6,
            minor: 0.2,
        }
    }

    pub fn plane() -> Self {
        Self::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sphere { .. } => "sphere",
            Self::Box { .. } => "box",
            Self::Torus { .. } => "torus",
            Self::CappedTorus { .. } => "capped-torus",
            Self::Plane { .. } => "plane",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("{}: {m}", self.name())));
        let ok = match *self {
            Self::Sphere { radius, .. } => radius > 0.0,
            Self::Box { half_extents, .. } => half_extents.iter().all(|e| *e > 0.0),
            Self::Torus { major, minor, .. } => minor > 0.0 && major > minor,
            Self::CappedTorus {
                half_angle,
                major,
                minor,
                ..
            } => minor > 0.0 && major > minor && half_angle > 0.0 && half_angle <= PI,
            Self::Plane { normal, .. } => (Vec3::from(normal).norm() - 1.0).abs() < 1e-9,
        };
        if !ok {
            return bad("parameters do not describe a valid surface");
        }
        if self.sdf(&Vec3::zeros()).abs() > 1.0 && !matches!(self, Self::Plane { .. }) {
            return bad("surface must lie inside [−1, 1]³");
        }
        Ok(())
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        match *self {
            Self::Sphere { center, radius } => (x - Vec3::from(center)).norm() - radius,
            Self::Box { center, half_extents } => {
                let q = (x - Vec3::from(center)).abs() - Vec3::from(half_extents);
                q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
            }
            Self::Torus { center, major, minor } => {
                let p = x - Vec3::from(center);
                let ring = p.xy().norm() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }
            Self::CappedTorus {
                center,
                half_angle,
                major,
                minor,
            } => {
                let mut p = x - Vec3::from(center);
                p.x = p.x.abs();
                let (sx, sy) = (half_angle.sin(), half_angle.cos());
                let k = if sy * p.x > sx * p.y {
                    p.x * sx + p.y * sy
                } else {
                    p.xy().norm()
                };
                (p.norm_squared() + major * major - 2.0 * major * k).max(0.0).sqrt() - minor
            }
            Self::Plane { normal, offset } => Vec3::from(normal).dot(x) - offset,
        }
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = FD_STEP;
            g[a] = (self.sdf(&(x + e)) - self.sdf(&(x - e))) / (2.0 * FD_STEP);
        }
        g
    }

    /// Newton projection onto the zero set.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        let mut p = *x;
        for _ in 0..4 {
            let g = self.gradient(&p);
            let n2 = g.norm_squared();
            if n2 < 1e-12 {
                break;
            }
            p -= g * (self.sdf(&p) / n2);
        }
        p
    }

    /// Reference surface: marching cubes with vertices projected onto the
    /// exact zero set.
    pub fn reference_mesh(&self, resolution: usize) -> Result<TriMesh> {
        let mut mesh = marching_cubes(self, resolution, 0.0)?;
        mesh.vertices.par_iter_mut().for_each(|v| *v = self.project(v));
        Ok(mesh)
    }

    /// `n` points uniformly distributed (by area) on the surface.
    pub fn sample_uniform<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
        self.validate()?;
        let gauss = |rng: &mut R| {
            Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            )
        };
        Ok(match *self {
            Self::Sphere { center, radius } => (0..n)
                .map(|_| Vec3::from(center) + gauss(rng).normalize() * radius)
                .collect(),
            Self::Torus { center, major, minor } => {
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let (t, f): (f64, f64) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
                    if rng.random::<f64>() * (major + minor) <= major + minor * f.cos() {
                        let ring = major + minor * f.cos();
                        out.push(Vec3::from(center) + Vec3::new(ring * t.cos(), ring * t.sin(), minor * f.sin()));
                    }
                }
                out
            }
            Self::Box { center, half_extents } => {
                let e = Vec3::from(half_extents);
                let areas = [e.y * e.z, e.x * e.z, e.x * e.y];
                let total: f64 = areas.iter().sum();
                (0..n)
                    .map(|_| {
                        let mut r = rng.random::<f64>() * total;
                        let mut axis = 2;
                        for (a, area) in areas.iter().enumerate() {
                            if r < *area {
                                axis = a;
                                break;
                            }
                            r -= area;
                        }
                        let mut p = Vec3::new(
                            rng.random_range(-e.x..e.x),
                            rng.random_range(-e.y..e.y),
                            rng.random_range(-e.z..e.z),
                        );
                        p[axis] = if rng.random::<bool>() { e[axis] } else { -e[axis] };
                        Vec3::from(center) + p
                    })
                    .collect()
            }
            Self::Plane { normal, offset } => {
                let nv = Vec3::from(normal);
                let helper = if nv.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                let u = nv.cross(&helper).normalize();
                let v = nv.cross(&u);
                (0..n)
                    .map(|_| nv * offset + u * rng.random_range(-0.8..0.8) + v * rng.random_range(-0.8..0.8))
                    .collect()
            }
            Self::CappedTorus { .. } => {
                let mesh = self.reference_mesh(128)?;
                let cdf: Vec<f64> = (0..mesh.triangles.len())
                    .scan(0.0, |acc, t| {
                        *acc += mesh.face_area(t);
                        Some(*acc)
                    })
                    .collect();
                let total = *cdf.last().ok_or(Error::EmptyLevelSet)?;
                (0..n)
                    .map(|_| {
                        let r = rng.random::<f64>() * total;
                        let t = cdf.partition_point(|c| *c < r).min(cdf.len() - 1);
                        let [a, b, c] = mesh.corners(t);
                        let (mut s, mut q) = (rng.random::<f64>(), rng.random::<f64>());
                        if s + q > 1.0 {
                            s = 1.0 - s;
                            q = 1.0 - q;
                        }
                        self.project(&(a + (b - a) * s + (c - a) * q))
                    })
                    .collect()
            }
        })
    }

    /// Point cloud in the given mode, reproducible from `seed`.
    pub fn sample(&self, n: usize, mode: SampleMode, seed: u64) -> Result<PointCloud> {
        let mut rng = stream_rng(seed, 0);
        let points = match mode {
            SampleMode::Uniform => self.sample_uniform(n, &mut rng)?,
            SampleMode::Sparse => self.sample_uniform(n.div_ceil(10), &mut rng)?,
            SampleMode::Noisy => {
                let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
                self.sample_uniform(n, &mut rng)?
                    .into_iter()
                    .map(|p| {
                        let g = self.gradient(&p);
                        let nrm = if g.norm() > 0.0 { g.normalize() } else { Vec3::zeros() };
                        p + nrm * noise.sample(&mut rng)
                    })
                    .collect()
            }
            SampleMode::Nonuniform => {
                let mut out = Vec::with_capacity(n);
                let mut rounds = 0;
                while out.len() < n {
                    rounds += 1;
                    if rounds > 1000 {
                        return Err(Error::RejectionStall {
                            rate: out.len() as f64 / (rounds as f64 * n as f64),
                            trials: rounds * n as u64,
                        });
                    }
                    for p in self.sample_uniform(n, &mut rng)? {
                        let density = 1.0 + 9.0 * p.x.max(0.0);
                        if rng.random::<f64>() * NONUNIFORM_MAX_DENSITY < density && out.len() < n {
                            out.push(p);
                        }
                    }
                }
                out
            }
        };
        PointCloud::new(points)
    }
}

/// Standard deviation of the normal-direction noise in `Noisy` mode.
pub const NOISE_SIGMA: f64 = 0.005;
/// Upper bound of `1 + 9·max(0, x₁)` over `[−1.2, 1.2]`.
const NONUNIFORM_MAX_DENSITY: f64 = 1.0 + 9.0 * DOMAIN_HALF_EXTENT;

impl ScalarField for AnalyticShape {
    fn value(&self, x: &Vec3) -> f64 {
        self.sdf(x)
    }

    fn sample(&self, x: &Vec3) -> FieldSample {
        FieldSample {
            value: self.sdf(x),
            gradient: self.gradient(x),
        }
    }

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        points.par_iter().map(|p| self.sdf(p)).collect()
    }

    fn samples(&self, points: &[Vec3]) -> Vec<FieldSample> {
        points.par_iter().map(|p| ScalarField::sample(self, p)).collect()
    }
}

impl FromStr for AnalyticShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::sphere()),
            "box" | "cube" => Ok(Self::cube()),
            "torus" => Ok(Self::torus()),
            "capped-torus" => Ok(Self::capped_torus()),
            "plane" => Ok(Self::plane()),
            _ => Err(Error::InvalidArgument(format!(
                "unknown shape '{s}' (sphere, box, torus, capped-torus, plane)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    Uniform,
    /// Density proportional to `1 + 9·max(0, x₁)`.
    Nonuniform,
    /// Uniform plus Gaussian offsets along the normal.
    Noisy,
    /// Uniform with a tenth of the requested points.
    Sparse,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "nonuniform" => Ok(Self::Nonuniform),
            "noisy" => Ok(Self::Noisy),
            "sparse" => Ok(Self::Sparse),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sample mode '{s}' (uniform, nonuniform, noisy, sparse)"
            ))),
        }
    }
}

/// Node values on a regular grid; node `(i, j, k)` sits at
/// `origin + h·(i, j, k)` and is stored at `(i·ny + j)·nz + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub h: f64,
    pub values: Vec<f64>,
}

const GRID_MAGIC: &[u8; 8] = b"HSDFGRID";
const GRID_VERSION: u32 = 1;
const GRID_HEADER: usize = 8 + 4 + 24 + 24 + 8;

impl GridField {
    /// `dims³` nodes spanning the closed domain.
    pub fn over_domain(dims: usize, values: Vec<f64>) -> Result<Self> {
        let g = Self {
            dims: [dims; 3],
            origin: Vec3::repeat(-DOMAIN_HALF_EXTENT),
            h: 2.0 * DOMAIN_HALF_EXTENT / (dims as f64 - 1.0),
            values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_fn(dims: usize, f: impl Fn(&Vec3) -> f64 + Sync + Send) -> Result<Self> {
        let mut g = Self::over_domain(dims, vec![0.0; dims * dims * dims])?;
        let nodes = g.nodes();
        g.values = nodes.par_iter().map(|p| f(p)).collect();
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| *d < 2) {
            return Err(Error::InvalidArgument(format!("grid dims {:?} too small", self.dims)));
        }
        let n = self.dims.iter().product::<usize>();
        if self.values.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                found: self.values.len(),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid node {i}")));
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.h
    }

    pub fn nodes(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.dims;
        (0..nx)
            .flat_map(|i| (0..ny).flat_map(move |j| (0..nz).map(move |k| (i, j, k))))
            .map(|(i, j, k)| self.node(i, j, k))
            .collect()
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Central differences inside, one-sided on the boundary.
    pub fn node_gradient(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let idx = [i, j, k];
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let (mut lo, mut hi) = (idx, idx);
            if idx[a] > 0 {
                lo[a] -= 1;
            }
            if idx[a] + 1 < self.dims[a] {
                hi[a] += 1;
            }
            let span = (hi[a] - lo[a]) as f64 * self.h;
            g[a] = (self.at(hi[0], hi[1], hi[2]) - self.at(lo[0], lo[1], lo[2])) / span;
        }
        g
    }

    /// Enclosing cell and local coordinates, clamped to the grid.
    fn locate(&self, x: &Vec3) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = ((x[a] - self.origin[a]) / self.h).clamp(0.0, (self.dims[a] - 1) as f64);
            let b = (t.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = t - b as f64;
        }
        (base, frac)
    }

    fn trilinear<T>(&self, x: &Vec3, corner: impl Fn(usize, usize, usize) -> T) -> T
    where
        T: std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let ([i, j, k], [fx, fy, fz]) = self.locate(x);
        let mut acc: Option<T> = None;
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = if dx == 1 { fx } else { 1.0 - fx }
                * if dy == 1 { fy } else { 1.0 - fy }
                * if dz == 1 { fz } else { 1.0 - fz };
            let term = corner(i + dx, j + dy, k + dz) * w;
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.expect("eight corners")
    }

    /// Writes the layout: magic `HSDFGRID`, u32 version, 3×u64 dims, 3×f64
    /// origin, f64 spacing, then the node values as little-endian f64.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut buf = Vec::with_capacity(GRID_HEADER + 8 * self.values.len());
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for d in self.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.origin.iter().chain(std::iter::once(&self.h)).chain(&self.values) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
                _ => Error::Io(e),
            })?
            .read_to_end(&mut buf)?;
        if buf.len() < GRID_HEADER || &buf[..8] != GRID_MAGIC {
            return Err(Error::CorruptBlob(format!("{} is not a grid file", path.display())));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != GRID_VERSION {
            return Err(Error::VersionMismatch(format!("grid file version {version}")));
        }
        let u = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap()) as usize;
        let f = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let dims = [u(12), u(20), u(28)];
        let body = &buf[GRID_HEADER..];
        let n = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        if n.map(|n| n.checked_mul(8) != Some(body.len())).unwrap_or(true) {
            return Err(Error::CorruptBlob(format!("grid body of {} bytes does not match dims {dims:?}", body.len())));
        }
        let g = Self {
            dims,
            origin: Vec3::new(f(36), f(44), f(52)),
            h: f(60),
            values: body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        g.validate()?;
        Ok(g)
    }
}

impl ScalarField for GridField {
    fn value(&self, x: &Vec3) -> f64 {
        self.trilinear(x, |i, j, k| self.at(i, j, k))
    }

    /// Value and the trilinear interpolant of node gradients.
    fn sample(&self, x: &Vec3) -> FieldSample {
        FieldSample {
            value: self.value(x),
            gradient: self.trilinear(x, |i, j, k| self.node_gradient(i, j, k)),
        }
    }
}

/// `(M + τK)` on the `dims³` node grid over `Ω`: lumped dual-cell mass and
/// the finite-volume 7-point stiffness with natural boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOperator {
    pub dims: usize,
    pub h: f64,
    pub tau: f64,
}

impl GridOperator {
    pub fn new(dims: usize, tau: f64) -> Result<Self> {
        if dims < 2 {
            return Err(Error::InvalidArgument(format!("dims must be ≥ 2, got {dims}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("τ must be finite and ≥ 0, got {tau}")));
        }
        Ok(Self {
            dims,
            h: 2.0 * DOMAIN_HALF_EXTENT / (dims as f64 - 1.0),
            tau,
        })
    }

    /// Dual-cell extent along one axis.
    fn extent(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.dims {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn mass(&self, i: usize, j: usize, k: usize) -> f64 {
        self.extent(i) * self.extent(j) * self.extent(k)
    }

    pub fn lumped_mass(&self) -> Vec<f64> {
        let n = self.dims;
        (0..n * n * n)
            .map(|id| self.mass(id / (n * n), (id / n) % n, id % n))
            .collect()
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dims;
        let inv_h = 1.0 / self.h;
        out.par_chunks_mut(n * n).enumerate().for_each(|(i, slab)| {
            for j in 0..n {
                for k in 0..n {
                    let id = (i * n + j) * n + k;
                    let ex = [self.extent(i), self.extent(j), self.extent(k)];
                    let mut acc = ex[0] * ex[1] * ex[2] * u[id];
                    let idx = [i, j, k];
                    let stride = [n * n, n, 1];
                    for a in 0..3 {
                        let face = self.tau * inv_h * ex[(a + 1) % 3] * ex[(a + 2) % 3];
                        if idx[a] > 0 {
                            acc += face * (u[id] - u[id - stride[a]]);
                        }
                        if idx[a] + 1 < n {
                            acc += face * (u[id] - u[id + stride[a]]);
                        }
                    }
                    slab[j * n + k] = acc;
                }
            }
        });
    }
}

/// Residual history of a conjugate-gradient solve (relative to `‖b‖`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain conjugate gradients from `u = 0` to relative residual `tol`.
pub fn conjugate_gradient(op: &GridOperator, b: &[f64], tol: f64, max_iterations: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut u = vec![0.0; n];
    let mut report = CgReport {
        iterations: 0,
        residuals: vec![1.0],
    };
    if b_norm == 0.0 {
        return Ok((u, report));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    while rr.sqrt() / b_norm > tol {
        if report.iterations >= max_iterations {
            return Err(Error::CgNoConvergence {
                iterations: report.iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for ((ui, ri), (pi, api)) in u.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *ui += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
        report.iterations += 1;
        report.residuals.push(rr.sqrt() / b_norm);
    }
    Ok((u, report))
}

/// Splits each weight over the 8 nodes of its enclosing cell by trilinear
/// weights; points outside `Ω` are clamped onto the boundary.
pub fn deposit(pc: &PointCloud, dims: usize) -> Result<Vec<f64>> {
    let grid = GridField::over_domain(dims, vec![0.0; dims * dims * dims])?;
    let mut b = vec![0.0; dims * dims * dims];
    for (p, w) in pc.points.iter().zip(&pc.weights) {
        let ([i, j, k], [fx, fy, fz]) = grid.locate(p);
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let s = if dx == 1 { fx } else { 1.0 - fx }
                * if dy == 1 { fy } else { 1.0 - fy }
                * if dz == 1 { fz } else { 1.0 - fz };
            b[grid.index(i + dx, j + dy, k + dz)] += w * s;
        }
    }
    Ok(b)
}

pub const CG_TOLERANCE: f64 = 1e-10;

/// Backward-Euler heat step from the weighted point masses of `pc`:
/// solves `(M + τK)u = b` on `dims³` nodes.
pub fn grid_heat_step(pc: &PointCloud, tau: f64, dims: usize) -> Result<(GridField, CgReport)> {
    if dims < 16 {
        return Err(Error::InvalidArgument(format!("grid dims must be ≥ 16, got {dims}")));
    }
    let op = GridOperator::new(dims, tau)?;
    let b = deposit(pc, dims)?;
    let (u, report) = conjugate_gradient(&op, &b, CG_TOLERANCE, 10 * dims)?;
    log::info!("grid heat step: dims {dims}, {} CG iterations", report.iterations);
    Ok((GridField::over_domain(dims, u)?, report))
}

/// Agreement between two fields on a point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldComparison {
    pub points: usize,
    pub correlation: f64,
    /// Angle between gradients, degrees.
    pub angle_median: f64,
    pub angle_p90: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Quantile by the lower nearest-rank rule.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn compare_fields<A: ScalarField, B: ScalarField>(a: &A, b: &B, region: &[Vec3]) -> FieldComparison {
    let (sa, sb) = (a.samples(region), b.samples(region));
    let va: Vec<f64> = sa.iter().map(|s| s.value).collect();
    let vb: Vec<f64> = sb.iter().map(|s| s.value).collect();
    let angles: Vec<f64> = sa
        .iter()
        .zip(&sb)
        .filter_map(|(x, y)| {
            let d = x.gradient.norm() * y.gradient.norm();
            (d > 0.0).then(|| (x.gradient.dot(&y.gradient) / d).clamp(-1.0, 1.0).acos().to_degrees())
        })
        .collect();
    FieldComparison {
        points: region.len(),
        correlation: pearson(&va, &vb),
        angle_median: quantile(&angles, 0.5),
        angle_p90: quantile(&angles, 0.9),
    }
}

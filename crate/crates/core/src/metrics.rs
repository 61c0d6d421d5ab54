//! Ground-truth distances to reference meshes and the four error measures
//! used to evaluate a trained SDF.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::ScalarField;
use crate::mesh::TriMesh;
use crate::sampling::{sample_narrow_band, stream_rng};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.lo - p).sup(&(p - self.hi)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Slab test for the ray `o + t·d`, `t ≥ 0`.
    fn hit_by_ray(&self, o: &Vec3, inv_d: &Vec3) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let ta = (self.lo[a] - o[a]) * inv_d[a];
            let tb = (self.hi[a] - o[a]) * inv_d[a];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            // NaN (0·∞) means the ray lies in the slab plane: keep it
            if near.is_nan() || far.is_nan() {
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        t0 <= t1
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: `start..start+count` into the permuted triangle list.
    /// Interior: `count == 0`, children at `start` and `start + 1`.
    start: usize,
    count: usize,
}

const LEAF_SIZE: usize = 4;

/// A closed, consistently outward-oriented triangle mesh with a bounding
/// volume hierarchy for distance and ray queries.
#[derive(Debug, Clone)]
pub struct ReferenceMesh {
    pub mesh: TriMesh,
    pub normals: Vec<Vec3>,
    pub centers: Vec<Vec3>,
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

enum Crossing {
    Miss,
    Hit,
    /// Grazes an edge or vertex, or runs in the triangle's plane.
    Degenerate,
}

impl ReferenceMesh {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        mesh.validate()?;
        if mesh.is_empty() {
            return Err(Error::InvalidArgument("reference mesh has no triangles".into()));
        }
        let normals: Vec<Vec3> = (0..mesh.triangles.len()).map(|t| mesh.face_normal(t)).collect();
        let centers = (0..mesh.triangles.len()).map(|t| mesh.face_center(t)).collect();
        let mut r = Self {
            mesh,
            normals,
            centers,
            nodes: Vec::new(),
            order: Vec::new(),
        };
        r.build();
        Ok(r)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        Self::new(TriMesh::read_obj(path)?)
    }

    fn build(&mut self) {
        let n = self.mesh.triangles.len();
        self.order = (0..n).collect();
        self.nodes = vec![BvhNode {
            bounds: Aabb::empty(),
            start: 0,
            count: n,
        }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (self.nodes[ni].start, self.nodes[ni].count);
            let mut bounds = Aabb::empty();
            let mut cbounds = Aabb::empty();
            for &t in &self.order[start..start + count] {
                for p in self.mesh.corners(t) {
                    bounds.grow(&p);
                }
                cbounds.grow(&self.centers[t]);
            }
            self.nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let ext = cbounds.hi - cbounds.lo;
            let axis = ext.imax();
            let slice = &mut self.order[start..start + count];
            let mid = count / 2;
            let centers = &self.centers;
            slice.select_nth_unstable_by(mid, |a, b| {
                centers[*a][axis].total_cmp(&centers[*b][axis]).then(a.cmp(b))
            });
            let left = self.nodes.len();
            self.nodes.push(BvhNode {
                bounds: Aabb::empty(),
                start,
                count: mid,
            });
            self.nodes.push(BvhNode {
                bounds: Aabb::empty(),
                start: start + mid,
                count: count - mid,
            });
            self.nodes[ni].start = left;
            self.nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
    }

    /// Exact unsigned distance to the mesh.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance_squared(p) >= best {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.corners(t);
                    best = best.min((closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared());
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let (dl, dr) = (self.nodes[l].bounds.distance_squared(p), self.nodes[r].bounds.distance_squared(p));
                // visit the nearer child first
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.sqrt()
    }

    /// Unsigned distance by scanning every triangle.
    pub fn distance_brute_force(&self, p: &Vec3) -> f64 {
        (0..self.mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = self.mesh.corners(t);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Crossing parity along one ray; `None` if the ray is degenerate.
    fn ray_parity(&self, o: &Vec3, d: &Vec3) -> Option<bool> {
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut crossings = 0usize;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.hit_by_ray(o, &inv) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.corners(t);
                    match ray_triangle(o, d, &a, &b, &c) {
                        Crossing::Miss => {}
                        Crossing::Hit => crossings += 1,
                        Crossing::Degenerate => return None,
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        Some(crossings % 2 == 1)
    }

    /// Whether `p` is enclosed, by majority vote of ray parities along the
    /// three axes (jittered directions on ties or degenerate rays).
    pub fn is_inside(&self, p: &Vec3) -> Result<bool> {
        let mut rng = stream_rng(0x5167, 0);
        for attempt in 0..=10 {
            let dirs: [Vec3; 3] = if attempt == 0 {
                [Vec3::x(), Vec3::y(), Vec3::z()]
            } else {
                let mut jitter = || {
                    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                };
                [
                    (Vec3::x() + 0.1 * jitter()).normalize(),
                    (Vec3::y() + 0.1 * jitter()).normalize(),
                    (Vec3::z() + 0.1 * jitter()).normalize(),
                ]
            };
            let (mut inside, mut outside) = (0, 0);
            for d in &dirs {
                match self.ray_parity(p, d) {
                    Some(true) => inside += 1,
                    Some(false) => outside += 1,
                    None => {}
                }
            }
            if inside != outside {
                return Ok(inside > outside);
            }
        }
        Err(Error::SignAmbiguous(10))
    }

    /// Exact distance, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> Result<f64> {
        let d = self.distance(p);
        if d < 1e-12 {
            return Ok(d);
        }
        Ok(if self.is_inside(p)? { -d } else { d })
    }

    pub fn signed_distances(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        points.par_iter().map(|p| self.signed_distance(p)).collect()
    }

    /// `n` points uniformly distributed over the surface area.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Vec<Vec3> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = (0..self.mesh.triangles.len())
            .map(|t| {
                acc += self.mesh.face_area(t);
                acc
            })
            .collect();
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let t = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                let [a, b, c] = self.mesh.corners(t);
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let s = r1.sqrt();
                a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
            })
            .collect()
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Crossing {
    const EPS: f64 = 1e-10;
    let e1 = b - a;
    let e2 = c - a;
    let pv = d.cross(&e2);
    let det = e1.dot(&pv);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= EPS * scale {
        // parallel: only a problem if the ray lies in the plane and meets it
        let n = e1.cross(&e2);
        if n.norm() > 0.0 && ((o - a).dot(&n) / n.norm()).abs() < EPS {
            return Crossing::Degenerate;
        }
        return Crossing::Miss;
    }
    let inv = 1.0 / det;
    let tv = o - a;
    let u = tv.dot(&pv) * inv;
    let qv = tv.cross(&e1);
    let v = d.dot(&qv) * inv;
    let t = e2.dot(&qv) * inv;
    let w = 1.0 - u - v;
    if u < -EPS || v < -EPS || w < -EPS || t < -EPS {
        return Crossing::Miss;
    }
    if u < EPS || v < EPS || w < EPS || t < EPS {
        return Crossing::Degenerate;
    }
    Crossing::Hit
}

/// Band evaluation points with their ground-truth signed distances.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    pub points: Vec<Vec3>,
    pub distances: Vec<f64>,
    pub seed: u64,
}

const BAND_MAGIC: &[u8; 8] = b"HSDFBAND";
const BAND_VERSION: u32 = 1;

impl BandSet {
    /// Rejection-samples `n` points with `|d| ≤ band` from a signed
    /// distance oracle.
    pub fn from_oracle<F>(distance: F, band: f64, n: usize, seed: u64) -> Result<Self>
    where
        F: Fn(&Vec3) -> f64 + Sync,
    {
        let points = sample_narrow_band(&distance, band, n, &mut stream_rng(seed, 0))?;
        let distances = points.par_iter().map(&distance).collect();
        Ok(Self { points, distances, seed })
    }

    /// Same, against a reference mesh (unsigned distance for rejection, sign
    /// only for accepted points).
    pub fn from_mesh(mesh: &ReferenceMesh, band: f64, n: usize, seed: u64) -> Result<Self> {
        let points = sample_narrow_band(|p| mesh.distance(p), band, n, &mut stream_rng(seed, 0))?;
        let distances = mesh.signed_distances(&points)?;
        Ok(Self { points, distances, seed })
    }

    /// Binary layout: magic `HSDFBAND`, u32 version, u64 seed, u64 count,
    /// then `count` records of four little-endian f64 (x, y, z, distance).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(28 + 32 * self.points.len());
        buf.extend_from_slice(BAND_MAGIC);
        buf.extend_from_slice(&BAND_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for (p, d) in self.points.iter().zip(&self.distances) {
            for v in [p.x, p.y, p.z, *d] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
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
        if buf.len() < 28 || &buf[..8] != BAND_MAGIC {
            return Err(Error::CorruptBlob(format!("{} is not a band file", path.display())));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != BAND_VERSION {
            return Err(Error::VersionMismatch(format!("band file version {version}")));
        }
        let seed = u64::from_le_bytes(buf[12..20].try_into().unwrap());
        let n = u64::from_le_bytes(buf[20..28].try_into().unwrap()) as usize;
        let body = &buf[28..];
        if body.len() != n * 32 {
            return Err(Error::CorruptBlob(format!("band file holds {} bytes for {n} points", body.len())));
        }
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let points = vals.chunks_exact(4).map(|r| Vec3::new(r[0], r[1], r[2])).collect();
        let distances = vals.chunks_exact(4).map(|r| r[3]).collect();
        Ok(Self { points, distances, seed })
    }
}

/// Lower-middle median (`n/2 − 1` for even `n` when 0-based sorted).
pub fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Mean of `φ²` over `points` on the reference surface.
pub fn e_recon_surface<F: ScalarField>(phi: &F, surface_points: &[Vec3]) -> f64 {
    let v = phi.values(surface_points);
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

/// `1 − mean(n · ∇φ/|∇φ|)` over face centers, skipping faces where the
/// gradient vanishes. Returns the value and the number of skipped faces.
pub fn e_recon_normal<F: ScalarField>(phi: &F, mesh: &ReferenceMesh) -> (f64, usize) {
    let samples = phi.samples(&mesh.centers);
    let mut sum = 0.0;
    let mut used = 0usize;
    for (s, n) in samples.iter().zip(&mesh.normals) {
        let g = s.gradient.norm();
        if g < 1e-12 {
            continue;
        }
        sum += n.dot(&s.gradient) / g;
        used += 1;
    }
    let skipped = samples.len() - used;
    if used == 0 {
        return (1.0, skipped);
    }
    (1.0 - sum / used as f64, skipped)
}

/// Mean absolute deviation from the ground-truth distances.
pub fn e_sdf<F: ScalarField>(phi: &F, band: &BandSet) -> f64 {
    let v = phi.values(&band.points);
    v.iter().zip(&band.distances).map(|(a, b)| (a - b).abs()).sum::<f64>() / v.len() as f64
}

/// Median of `|1 − |∇φ||` over the band points.
pub fn e_eik<F: ScalarField>(phi: &F, band_points: &[Vec3]) -> f64 {
    let r: Vec<f64> = phi.samples(band_points).iter().map(|s| (1.0 - s.gradient.norm()).abs()).collect();
    lower_median(&r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub e_recon_surface: f64,
    pub e_recon_normal: f64,
    pub e_sdf: f64,
    pub e_eik: f64,
    pub surface_samples: usize,
    pub band_points: usize,
    pub skipped_faces: usize,
    pub seeds: Vec<u64>,
}

pub const CSV_HEADER: &str = "model,e_recon_s,e_recon_n,e_sdf,e_eik,seeds";

impl MetricsReport {
    /// One CSV row; seeds are `;`-separated.
    pub fn csv_row(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.model.replace(',', "_"),
            self.e_recon_surface,
            self.e_recon_normal,
            self.e_sdf,
            self.e_eik,
            seeds.join(";")
        )
    }
}

pub fn write_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Evaluates all four measures.
pub fn evaluate<F: ScalarField>(
    model: &str,
    phi: &F,
    mesh: &ReferenceMesh,
    band: &BandSet,
    surface_samples: usize,
    surface_seed: u64,
) -> MetricsReport {
    let surface = mesh.sample_surface(surface_samples, surface_seed);
    let (e_n, skipped) = e_recon_normal(phi, mesh);
    if skipped > 0 {
        log::warn!("{skipped} face centers with vanishing gradient skipped");
    }
    MetricsReport {
        model: model.to_string(),
        e_recon_surface: e_recon_surface(phi, &surface),
        e_recon_normal: e_n,
        e_sdf: e_sdf(phi, band),
        e_eik: e_eik(phi, &band.points),
        surface_samples,
        band_points: band.points.len(),
        skipped_faces: skipped,
        seeds: vec![surface_seed, band.seed],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> ReferenceMesh {
        ReferenceMesh::new(TriMesh::cuboid(Vec3::repeat(-0.5), Vec3::repeat(0.5))).unwrap()
    }

    #[test]
    fn cube_queries() {
        let c = cube();
        assert!((c.signed_distance(&Vec3::zeros()).unwrap() + 0.5).abs() < 1e-15);
        assert!(c.signed_distance(&Vec3::repeat(0.5)).unwrap().abs() < 1e-12);
        assert!((c.signed_distance(&Vec3::new(1.0, 0.0, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        // ray along +x from here passes exactly through an edge
        assert!(c.signed_distance(&Vec3::new(0.2, 0.5 - 0.25, 0.25)).unwrap() < 0.0);
        assert!(c.signed_distance(&Vec3::new(-0.7, 0.5, 0.5)).unwrap() > 0.0);
    }

    #[test]
    fn icosphere_distance() {
        let s = ReferenceMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.5, 3)).unwrap();
        let d = s.signed_distance(&Vec3::new(0.7, 0.0, 0.0)).unwrap();
        assert!((d - 0.2).abs() < 2e-3, "{d}");
        let mut rng = stream_rng(1, 1);
        for _ in 0..200 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            assert_eq!(s.distance(&p), s.distance_brute_force(&p));
        }
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert!((closest_point_on_triangle(&Vec3::new(0.2, 0.2, 3.0), &a, &b, &c) - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let p = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((p - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vec3::new(0.5, -2.0, 1.0), &a, &b, &c), Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn median_rule() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn band_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("band.bin");
        let b = BandSet::from_oracle(|p| p.norm() - 0.5, 0.1, 300, 7).unwrap();
        b.write(&path).unwrap();
        assert_eq!(BandSet::read(&path).unwrap(), b);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(BandSet::read(&path), Err(Error::CorruptBlob(_))));
    }

    #[test]
    fn csv_format() {
        let r = MetricsReport {
            model: "sphere".into(),
            e_recon_surface: 0.5,
            e_recon_normal: 0.0,
            e_sdf: 1e-3,
            e_eik: 2.0,
            surface_samples: 10,
            band_points: 10,
            skipped_faces: 0,
            seeds: vec![1, 2],
        };
        assert_eq!(r.csv_row(), "sphere,5e-1,0e0,1e-3,2e0,1;2");
    }
}

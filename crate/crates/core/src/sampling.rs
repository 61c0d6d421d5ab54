//! Stochastic sampling for the Monte-Carlo losses and the evaluation band.
//!
//! All randomness comes from ChaCha8 streams (`seed`, `stream`), so batches
//! are reproducible across platforms and independent workers can be given
//! disjoint streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::pointcloud::PointCloud;
use crate::{in_domain, Error, Result, Vec3, DOMAIN_HALF_EXTENT, DOMAIN_VOLUME};

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform_in_domain<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let p = Vec3::new(
            rng.random_range(-DOMAIN_HALF_EXTENT..DOMAIN_HALF_EXTENT),
            rng.random_range(-DOMAIN_HALF_EXTENT..DOMAIN_HALF_EXTENT),
            rng.random_range(-DOMAIN_HALF_EXTENT..DOMAIN_HALF_EXTENT),
        );
        if in_domain(&p) {
            return p;
        }
    }
}

/// Uniform quadrature points over `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeBatch {
    pub points: Vec<Vec3>,
    pub domain_volume: f64,
}

impl VolumeBatch {
    /// Weight of one sample in the integral estimate `|Ω| · mean(f)`.
    pub fn sample_weight(&self) -> f64 {
        self.domain_volume / self.points.len() as f64
    }

    pub fn estimate(&self, values: &[f64]) -> f64 {
        self.sample_weight() * values.iter().sum::<f64>()
    }
}

pub fn sample_volume<R: Rng>(rng: &mut R, n: usize) -> VolumeBatch {
    assert!(n >= 1, "volume batch needs at least one point");
    VolumeBatch {
        points: (0..n).map(|_| uniform_in_domain(rng)).collect(),
        domain_volume: DOMAIN_VOLUME,
    }
}

/// Cloud points with quadrature weights for the mean surface integral.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceBatch {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl SurfaceBatch {
    pub fn estimate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Draws surface batches from a weighted cloud.
///
/// A batch as large as the cloud is the full weighted sum. Smaller batches
/// draw `m` indices with replacement with probability `ω_i` and weight each
/// draw `1/m`, which is an unbiased estimator of `Σ ω_i u(x_i)`.
pub struct SurfaceSampler<'a> {
    cloud: &'a PointCloud,
    cdf: Vec<f64>,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        let mut acc = 0.0;
        let cdf = cloud
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cloud, cdf }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, m: usize) -> SurfaceBatch {
        let n = self.cloud.len();
        assert!(m >= 1 && m <= n, "surface batch size must be in 1..=N");
        if m == n {
            return SurfaceBatch {
                points: self.cloud.points.clone(),
                weights: self.cloud.weights.clone(),
            };
        }
        let total = *self.cdf.last().expect("nonempty cloud");
        let points = (0..m)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let i = self.cdf.partition_point(|c| *c <= u).min(n - 1);
                self.cloud.points[i]
            })
            .collect();
        SurfaceBatch {
            points,
            weights: vec![1.0 / m as f64; m],
        }
    }
}

pub fn sample_surface<R: Rng>(cloud: &PointCloud, rng: &mut R, m: usize) -> SurfaceBatch {
    SurfaceSampler::new(cloud).sample(rng, m)
}

const STALL_TRIALS: u64 = 10_000_000;
const STALL_RATE: f64 = 1e-5;

/// Rejection-samples `n` points of `Ω` with `|distance(x)| ≤ band`.
pub fn sample_narrow_band<F, R>(distance: F, band: f64, n: usize, rng: &mut R) -> Result<Vec<Vec3>>
where
    F: Fn(&Vec3) -> f64 + Sync,
    R: Rng,
{
    sample_narrow_band_counted(distance, band, n, rng).map(|(p, _)| p)
}

/// Like [`sample_narrow_band`], also returning the number of uniform trials
/// consumed, so `|Ω| · n / trials` estimates the band volume.
pub fn sample_narrow_band_counted<F, R>(distance: F, band: f64, n: usize, rng: &mut R) -> Result<(Vec<Vec3>, u64)>
where
    F: Fn(&Vec3) -> f64 + Sync,
    R: Rng,
{
    let mut accepted = Vec::with_capacity(n);
    let mut trials: u64 = 0;
    let round = 4096;
    while accepted.len() < n {
        let candidates: Vec<Vec3> = (0..round).map(|_| uniform_in_domain(rng)).collect();
        let keep: Vec<bool> = candidates.par_iter().map(|p| distance(p).abs() <= band).collect();
        for (p, k) in candidates.into_iter().zip(keep) {
            if accepted.len() == n {
                break;
            }
            trials += 1;
            if k {
                accepted.push(p);
            }
        }
        let rate = accepted.len() as f64 / trials as f64;
        if trials >= STALL_TRIALS && rate < STALL_RATE {
            return Err(Error::RejectionStall { rate, trials });
        }
    }
    Ok((accepted, trials))
}

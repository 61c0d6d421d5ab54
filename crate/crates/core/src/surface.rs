//! Working with a trained SDF: marching-cubes extraction, boolean
//! combinations, and a heat flow on its level sets.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{FieldSample, NeuralField, SampleAdjoint, ScalarField};
use crate::heat::blend_mu;
use crate::mc_tables::{CORNERS, EDGES, TRIANGLE_TABLE};
use crate::mesh::TriMesh;
use crate::sampling::{sample_narrow_band_counted, stream_rng};
use crate::sdf::eta_delta;
use crate::train::{train, TrainSchedule, TrainTrace};
use crate::{Error, Result, Vec3, DOMAIN_HALF_EXTENT, DOMAIN_VOLUME};

/// Triangulates `{field = iso}` from samples on a `resolution³` node grid
/// spanning `Ω`. Vertices shared by neighboring cubes are welded, and
/// triangles wind counter-clockwise seen from the side where the field
/// exceeds `iso`.
pub fn marching_cubes<F: ScalarField>(field: &F, resolution: usize, iso: f64) -> Result<TriMesh> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!("resolution must be ≥ 8, got {resolution}")));
    }
    let n = resolution;
    let h = 2.0 * DOMAIN_HALF_EXTENT / (n - 1) as f64;
    let node = |i: usize, j: usize, k: usize| {
        Vec3::new(
            -DOMAIN_HALF_EXTENT + i as f64 * h,
            -DOMAIN_HALF_EXTENT + j as f64 * h,
            -DOMAIN_HALF_EXTENT + k as f64 * h,
        )
    };
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let slab: Vec<Vec3> = (0..n).flat_map(|j| (0..n).map(move |k| (j, k))).map(|(j, k)| node(i, j, k)).collect();
            field.values(&slab)
        })
        .collect();
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    let mut any_sign_change = false;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let mut case = 0usize;
                let mut corner_vals = [0.0; 8];
                let mut corner_idx = [0usize; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    let id = idx(i + off[0], j + off[1], k + off[2]);
                    corner_idx[c] = id;
                    corner_vals[c] = values[id];
                    if corner_vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                any_sign_change = true;
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    let (va, vb) = (corner_vals[a], corner_vals[b]);
                    if (va < iso) == (vb < iso) {
                        continue;
                    }
                    let (ga, gb) = (corner_idx[a].min(corner_idx[b]), corner_idx[a].max(corner_idx[b]));
                    edge_vertex[e] = *welded.entry((ga, gb)).or_insert_with(|| {
                        let pa = node(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = node(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let t = (iso - va) / (vb - va);
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    });
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[2] as usize],
                        edge_vertex[tri[1] as usize],
                    ];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        triangles.push(t);
                    }
                }
            }
        }
    }
    if !any_sign_change {
        return Err(Error::EmptyLevelSet);
    }
    TriMesh::new(vertices, triangles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsgOp {
    /// Pointwise minimum.
    Union,
    /// Pointwise maximum.
    Intersection,
}

/// Boolean combination of two implicit shapes. The result has the right
/// sign everywhere but is not a distance field.
pub struct Csg<A, B> {
    pub a: A,
    pub b: B,
    pub op: CsgOp,
}

pub fn csg_combine<A: ScalarField, B: ScalarField>(a: A, b: B, op: CsgOp) -> Csg<A, B> {
    Csg { a, b, op }
}

impl<A: ScalarField, B: ScalarField> Csg<A, B> {
    fn pick_a(&self, va: f64, vb: f64) -> bool {
        match self.op {
            CsgOp::Union => va <= vb,
            CsgOp::Intersection => va >= vb,
        }
    }
}

impl<A: ScalarField, B: ScalarField> ScalarField for Csg<A, B> {
    fn value(&self, x: &Vec3) -> f64 {
        let (va, vb) = (self.a.value(x), self.b.value(x));
        if self.pick_a(va, vb) {
            va
        } else {
            vb
        }
    }

    fn sample(&self, x: &Vec3) -> FieldSample {
        let (sa, sb) = (self.a.sample(x), self.b.sample(x));
        if self.pick_a(sa.value, sb.value) {
            sa
        } else {
            sb
        }
    }

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        let (va, vb) = (self.a.values(points), self.b.values(points));
        va.into_iter().zip(vb).map(|(a, b)| if self.pick_a(a, b) { a } else { b }).collect()
    }
}

/// Narrow-band weight: 1 for `|s| ≤ σ/2`, 0 for `|s| ≥ σ`, cubic in between.
pub fn mu_sigma(s: f64, sigma: f64) -> f64 {
    let half = 0.5 * sigma;
    blend_mu((s.abs() - half) / half)
}

/// Smoothed indicator of the ball `|x − c| < r` (transition width `2δ`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothBall {
    pub center: Vec3,
    pub radius: f64,
    pub delta: f64,
}

impl ScalarField for SmoothBall {
    fn value(&self, x: &Vec3) -> f64 {
        eta_delta((x - self.center).norm() - self.radius, self.delta)
    }

    fn sample(&self, x: &Vec3) -> FieldSample {
        let d = x - self.center;
        let r = d.norm();
        let s = r - self.radius;
        let g = if r > 0.0 {
            crate::sdf::eta_delta_derivative(s, self.delta) * d / r
        } else {
            Vec3::zeros()
        };
        FieldSample {
            value: eta_delta(s, self.delta),
            gradient: g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tau: f64,
    pub sigma: f64,
    pub schedule: TrainSchedule,
    /// Band points drawn per batch.
    pub batch_size: usize,
    /// Size of the precomputed band point pool.
    pub pool_size: usize,
    /// Points held out for the energy check.
    pub validation_size: usize,
    /// Renormalize `∇φ` where `|∇φ| > 0.5`; keeps the tangential term non-negative off the zero set.
    pub renormalize: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            sigma: 0.05,
            schedule: TrainSchedule {
                epochs: 5,
                batches_per_epoch: 200,
                initial_lr: 1e-4,
                ..TrainSchedule::default()
            },
            batch_size: 2000,
            pool_size: 50_000,
            validation_size: 10_000,
            renormalize: true,
        }
    }
}

/// Band points with cached `φ`, `∇φ` and the quadrature weight per point
/// of a full-pool sum.
pub struct BandPool {
    pub points: Vec<Vec3>,
    pub phi: Vec<FieldSample>,
    /// Estimated volume of `{|φ| ≤ σ}`.
    pub band_volume: f64,
}

impl BandPool {
    pub fn new<F: ScalarField>(phi: &F, sigma: f64, n: usize, seed: u64, renormalize: bool) -> Result<Self> {
        let (points, trials) = sample_narrow_band_counted(|p| phi.value(p), sigma, n, &mut stream_rng(seed, 0))?;
        let mut samples = phi.samples(&points);
        if renormalize {
            for s in &mut samples {
                let g = s.gradient.norm();
                if g > 0.5 {
                    s.gradient /= g;
                }
            }
        }
        Ok(Self {
            band_volume: DOMAIN_VOLUME * points.len() as f64 / trials as f64,
            points,
            phi: samples,
        })
    }
}

/// Per-sample integrand `μ_σ(φ)[(w − w_k)² + τ(|∇w|² − (∇φ·∇w)²)]` scaled
/// by `c`, with adjoints.
fn flow_sample(c: f64, tau: f64, sigma: f64, phi: &FieldSample, w: &FieldSample, wk: f64) -> SampleAdjoint {
    let m = c * mu_sigma(phi.value, sigma);
    if m == 0.0 {
        return SampleAdjoint::ZERO;
    }
    let diff = w.value - wk;
    let gp = &phi.gradient;
    let along = gp.dot(&w.gradient);
    SampleAdjoint {
        loss: m * (diff * diff + tau * (w.gradient.norm_squared() - along * along)),
        d_value: 2.0 * m * diff,
        d_gradient: 2.0 * m * tau * (w.gradient - along * gp),
    }
}

/// The level-set heat-flow energy of `w` against `w_k` over the given pool
/// points, and its parameter gradient.
pub fn flow_loss(
    w: &NeuralField,
    points: &[Vec3],
    phi: &[FieldSample],
    wk: &[f64],
    weight: f64,
    tau: f64,
    sigma: f64,
) -> (f64, Vec<f64>) {
    w.accumulate(points, |i, s| flow_sample(weight, tau, sigma, &phi[i], s, wk[i]))
}

/// Energy without gradient, for any field.
pub fn flow_energy<W: ScalarField>(
    w: &W,
    points: &[Vec3],
    phi: &[FieldSample],
    wk: &[f64],
    weight: f64,
    tau: f64,
    sigma: f64,
) -> f64 {
    let samples = w.samples(points);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| flow_sample(weight, tau, sigma, &phi[i], s, wk[i]).loss)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetState {
    pub w: NeuralField,
    pub step_index: usize,
    pub tau_pde: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowStepReport {
    /// Validation energy of the previous iterate (its fidelity term is 0).
    pub energy_before: f64,
    /// Validation energy of the new iterate.
    pub energy_after: f64,
    /// Validation `∫ μ_σ w_k²`, the scale of the fidelity term.
    pub fidelity_scale: f64,
    pub trace: TrainTrace,
}

impl FlowStepReport {
    /// Whether the step did not increase the energy beyond `tol` times the
    /// fidelity scale.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.energy_after <= self.energy_before + tol * self.fidelity_scale.max(f64::MIN_POSITIVE)
    }
}

/// Pool split into training and validation points for one flow run.
pub struct FlowDomain {
    pub train: BandPool,
    pub validation: BandPool,
}

impl FlowDomain {
    pub fn new<F: ScalarField>(phi: &F, config: &FlowConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            train: BandPool::new(phi, config.sigma, config.pool_size, seed, config.renormalize)?,
            validation: BandPool::new(phi, config.sigma, config.validation_size, seed ^ 0x9e37_79b9, config.renormalize)?,
        })
    }
}

/// One implicit Euler step: trains `w^{k+1}` starting from `init`.
pub fn surface_heat_flow_step<W: ScalarField>(
    domain: &FlowDomain,
    w_k: &W,
    init: NeuralField,
    config: &FlowConfig,
    seed: u64,
) -> Result<(NeuralField, FlowStepReport)> {
    if !(config.tau > 0.0 && config.sigma > 0.0) {
        return Err(Error::ConfigInvalid("flow τ and σ must be positive".into()));
    }
    let pool = &domain.train;
    let wk = w_k.values(&pool.points);
    let m = config.batch_size.max(1);
    let weight = pool.band_volume / m as f64;
    let (tau, sigma) = (config.tau, config.sigma);
    let (w, trace) = train(
        init,
        &config.schedule,
        seed,
        |f, rng| {
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..pool.points.len())).collect();
            let pts: Vec<Vec3> = idx.iter().map(|&i| pool.points[i]).collect();
            let phi: Vec<FieldSample> = idx.iter().map(|&i| pool.phi[i]).collect();
            let wkb: Vec<f64> = idx.iter().map(|&i| wk[i]).collect();
            Ok(flow_loss(f, &pts, &phi, &wkb, weight, tau, sigma))
        },
        |_, _, _| Ok(()),
    )?;
    let val = &domain.validation;
    let vw = val.band_volume / val.points.len() as f64;
    let wk_val = w_k.values(&val.points);
    let report = FlowStepReport {
        energy_before: flow_energy(w_k, &val.points, &val.phi, &wk_val, vw, tau, sigma),
        energy_after: flow_energy(&w, &val.points, &val.phi, &wk_val, vw, tau, sigma),
        fidelity_scale: val
            .phi
            .iter()
            .zip(&wk_val)
            .map(|(p, v)| vw * mu_sigma(p.value, sigma) * v * v)
            .sum(),
        trace,
    };
    log::info!(
        "flow step: energy {:.6e} → {:.6e} (fidelity scale {:.3e})",
        report.energy_before,
        report.energy_after,
        report.fidelity_scale
    );
    Ok((w, report))
}

/// Fits a network to initial data on the band (plain least squares).
pub fn fit_initial_data<W: ScalarField>(
    domain: &FlowDomain,
    target: &W,
    init: NeuralField,
    config: &FlowConfig,
    seed: u64,
) -> Result<(NeuralField, TrainTrace)> {
    let pool = &domain.train;
    let t = target.values(&pool.points);
    let m = config.batch_size.max(1);
    let weight = pool.band_volume / m as f64;
    train(
        init,
        &config.schedule,
        seed,
        |f, rng| {
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..pool.points.len())).collect();
            let pts: Vec<Vec3> = idx.iter().map(|&i| pool.points[i]).collect();
            Ok(f.accumulate_values(&pts, |j, v| {
                let d = v - t[idx[j]];
                (weight * d * d, 2.0 * weight * d)
            }))
        },
        |_, _, _| Ok(()),
    )
}

/// Runs `steps` flow steps from `w0`, warm-starting each step from the
/// previous network. Returns every iterate (including `w0`) and the step
/// reports.
pub fn run_flow(
    domain: &FlowDomain,
    w0: NeuralField,
    steps: usize,
    config: &FlowConfig,
    seed: u64,
) -> Result<(Vec<LevelSetState>, Vec<FlowStepReport>)> {
    let mut states = vec![LevelSetState {
        w: w0,
        step_index: 0,
        tau_pde: config.tau,
        sigma: config.sigma,
    }];
    let mut reports = Vec::new();
    for k in 0..steps {
        let prev = &states[k].w;
        let (w, report) = surface_heat_flow_step(domain, prev, prev.clone(), config, seed.wrapping_add(k as u64 + 1))?;
        reports.push(report);
        states.push(LevelSetState {
            w,
            step_index: k + 1,
            tau_pde: config.tau,
            sigma: config.sigma,
        });
    }
    Ok((states, reports))
}

//! Second stage: fit a signed distance field to the heat directions.
//!
//! The objective is
//!
//! ```text
//! ∫ η_δ(φ)|∇φ + n|² + (1 − η_δ(φ))|∇φ − n|² dx
//!   + λ_fit ∮ φ² da
//!   + λ_B h³ (Σ_{inside cells} (1 − η_δ(φ)) + Σ_{outside cells} η_δ(φ))
//! ```
//!
//! where `n` is the unsigned-distance direction from the heat stage and the
//! cell sums run over the orientation grid's cell centers.

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::field::{NeuralField, SampleAdjoint};
use crate::heat::HeatSolution;
use crate::orientation::{CellLabel, RegionMask};
use crate::pointcloud::PointCloud;
use crate::sampling::{sample_volume, SurfaceBatch, SurfaceSampler, VolumeBatch};
use crate::train::{train, FitConfig, TrainTrace};
use crate::{Error, Result, Vec3};

/// Smoothed Heaviside of the negative half-line: 1 for `t < −1`,
/// `¼(t+2)(t−1)²` on `[−1, 1]`, 0 for `t > 1`.
pub fn eta(t: f64) -> f64 {
    if t <= -1.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        0.25 * (t + 2.0) * (t - 1.0) * (t - 1.0)
    }
}

pub fn eta_derivative(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        0.75 * (t * t - 1.0)
    }
}

pub fn eta_delta(s: f64, delta: f64) -> f64 {
    eta(s / delta)
}

pub fn eta_delta_derivative(s: f64, delta: f64) -> f64 {
    eta_derivative(s / delta) / delta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfConfig {
    pub lambda_fit: f64,
    pub lambda_b: f64,
    pub delta: f64,
    /// Blend in the far-field heat gradient; otherwise the near field is used
    /// everywhere.
    pub use_far_field: bool,
    /// Evaluate this many random inside and outside cell centers per batch
    /// (scaled to the full counts) instead of the full cell sums.
    pub region_samples: Option<usize>,
    /// Initial Adam step for this stage; the shared schedule's otherwise.
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            lambda_fit: 100.0,
            lambda_b: 1.0,
            delta: 0.005,
            use_far_field: true,
            region_samples: None,
            learning_rate: None,
        }
    }
}

impl SdfConfig {
    pub fn validate(&self, h: f64) -> Result<()> {
        if !(self.lambda_fit > 0.0 && self.lambda_b > 0.0 && self.delta > 0.0) {
            return Err(Error::ConfigInvalid("λ_fit, λ_B and δ must be positive".into()));
        }
        if 2.0 * self.delta > h {
            return Err(Error::ConfigInvalid(format!(
                "2δ ≤ h violated: δ = {}, h = {h}",
                self.delta
            )));
        }
        if matches!(self.learning_rate, Some(lr) if !(lr > 0.0)) {
            return Err(Error::ConfigInvalid("sdf learning_rate must be positive".into()));
        }
        if self.region_samples == Some(0) {
            return Err(Error::ConfigInvalid("region_samples must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-sample normal-alignment integrand and its adjoints; `c` is the
/// quadrature weight.
fn normal_sample(c: f64, value: f64, g: &Vec3, n: &Vec3, delta: f64) -> SampleAdjoint {
    let e = eta_delta(value, delta);
    let plus = (g + n).norm_squared();
    let minus = (g - n).norm_squared();
    SampleAdjoint {
        loss: c * (e * plus + (1.0 - e) * minus),
        d_value: c * eta_delta_derivative(value, delta) * (plus - minus),
        d_gradient: 2.0 * c * (g + (2.0 * e - 1.0) * n),
    }
}

/// Monte-Carlo estimate of the normal-alignment term; `targets[i]` is the
/// unsigned-distance direction at `vol.points[i]` (zero where undefined).
pub fn normal_loss(phi: &NeuralField, targets: &[Vec3], vol: &VolumeBatch, delta: f64) -> Result<(f64, Vec<f64>)> {
    if targets.len() != vol.points.len() {
        return Err(Error::ShapeMismatch {
            expected: vol.points.len(),
            found: targets.len(),
        });
    }
    let c = vol.sample_weight();
    Ok(phi.accumulate(&vol.points, |i, s| normal_sample(c, s.value, &s.gradient, &targets[i], delta)))
}

/// `Σ w_j φ(x_j)²`.
pub fn fit_loss(phi: &NeuralField, surf: &SurfaceBatch) -> (f64, Vec<f64>) {
    phi.accumulate_values(&surf.points, |i, v| {
        let w = surf.weights[i];
        (w * v * v, 2.0 * w * v)
    })
}

/// Cell centers entering the region term with their quadrature weights.
#[derive(Debug, Clone, Default)]
pub struct RegionBatch {
    pub inside: Vec<Vec3>,
    pub outside: Vec<Vec3>,
    pub inside_weight: f64,
    pub outside_weight: f64,
}

impl RegionBatch {
    /// All inside and outside centers with weight `h³`.
    pub fn full(mask: &RegionMask) -> Self {
        let h3 = mask.h.powi(3);
        Self {
            inside: mask.cells_of(CellLabel::Inside),
            outside: mask.cells_of(CellLabel::Outside),
            inside_weight: h3,
            outside_weight: h3,
        }
    }

    /// `k` centers of each label drawn uniformly with replacement, weighted
    /// so the sums stay unbiased.
    pub fn subsample<R: Rng>(full: &RegionBatch, k: usize, rng: &mut R) -> Self {
        let pick = |cells: &[Vec3], rng: &mut R| -> (Vec<Vec3>, f64) {
            if cells.is_empty() {
                return (Vec::new(), 0.0);
            }
            let m = k.min(cells.len());
            if m == cells.len() {
                return (cells.to_vec(), 1.0);
            }
            let pts = (0..m).map(|_| cells[rng.random_range(0..cells.len())]).collect();
            (pts, cells.len() as f64 / m as f64)
        };
        let (inside, si) = pick(&full.inside, rng);
        let (outside, so) = pick(&full.outside, rng);
        Self {
            inside,
            outside,
            inside_weight: full.inside_weight * si,
            outside_weight: full.outside_weight * so,
        }
    }
}

/// `w_in Σ_inside (1 − η_δ(φ)) + w_out Σ_outside η_δ(φ)`.
pub fn region_loss(phi: &NeuralField, cells: &RegionBatch, delta: f64) -> (f64, Vec<f64>) {
    let (wi, wo) = (cells.inside_weight, cells.outside_weight);
    let (li, mut gi) = phi.accumulate_values(&cells.inside, |_, v| {
        (wi * (1.0 - eta_delta(v, delta)), -wi * eta_delta_derivative(v, delta))
    });
    let (lo, go) = phi.accumulate_values(&cells.outside, |_, v| {
        (wo * eta_delta(v, delta), wo * eta_delta_derivative(v, delta))
    });
    for (a, b) in gi.iter_mut().zip(&go) {
        *a += b;
    }
    (li + lo, gi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfModel {
    pub phi: NeuralField,
    /// Digest of the heat checkpoint the model was fitted against.
    pub heat_ref: String,
    pub config: SdfConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SdfRecord {
    stage: String,
    heat_ref: String,
    config: SdfConfig,
}

impl SdfModel {
    pub fn to_checkpoint(&self, run: serde_json::Value) -> Result<Checkpoint> {
        let mut meta = serde_json::to_value(SdfRecord {
            stage: "sdf".into(),
            heat_ref: self.heat_ref.clone(),
            config: self.config,
        })?;
        meta["run"] = run;
        Ok(Checkpoint::new(meta).with_field("phi", self.phi.clone()))
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let record: SdfRecord = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::VersionMismatch(format!("not an SDF checkpoint: {e}")))?;
        if record.stage != "sdf" {
            return Err(Error::VersionMismatch(format!("expected an SDF checkpoint, found '{}'", record.stage)));
        }
        Ok(Self {
            phi: c.field("phi")?.clone(),
            heat_ref: record.heat_ref,
            config: record.config,
        })
    }
}

/// Per-term losses of the last epoch plus a full evaluation of the region
/// term after training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdfReport {
    pub normal: f64,
    pub fit: f64,
    pub region: f64,
    /// Region term over all cells after training.
    pub final_region: f64,
    pub misclassified_inside: usize,
    pub misclassified_outside: usize,
    pub trace: TrainTrace,
}

impl SdfReport {
    pub fn region_vanished(&self) -> bool {
        self.final_region == 0.0
    }
}

/// Trains `φ` from a fresh initialization.
pub fn solve_sdf(
    heat: &HeatSolution,
    heat_ref: &str,
    mask: &RegionMask,
    pc: &PointCloud,
    config: &SdfConfig,
    fit: &FitConfig,
    seed: u64,
) -> Result<(SdfModel, SdfReport)> {
    config.validate(mask.h)?;
    let mut heat = heat.clone();
    if !config.use_far_field {
        heat.near_field_only = true;
    }
    let cells = RegionBatch::full(mask);
    if cells.inside.is_empty() {
        log::warn!("no inside cells: the region term only penalizes the outside");
    }
    let sampler = SurfaceSampler::new(pc);
    let m = fit.surface_samples.min(pc.len()).max(1);
    let phi = NeuralField::init_siren(fit.architecture, seed)?;
    // running per-term sums of the current epoch, and those of the last one
    let terms = Cell::new([0.0f64; 3]);
    let last_terms = Cell::new([0.0f64; 3]);
    let batches = fit.schedule.batches_per_epoch as f64;
    let mut schedule = fit.schedule;
    if let Some(lr) = config.learning_rate {
        schedule.initial_lr = lr;
    }
    let (phi, trace) = train(
        phi,
        &schedule,
        seed,
        |f, rng| {
            let vol = sample_volume(rng, fit.volume_samples);
            let surf = sampler.sample(rng, m);
            let targets = heat.target_normals(&vol.points);
            let (ln, mut g) = normal_loss(f, &targets, &vol, config.delta)?;
            let (lf, gf) = fit_loss(f, &surf);
            let (lb, gb) = match config.region_samples {
                Some(k) => region_loss(f, &RegionBatch::subsample(&cells, k, rng), config.delta),
                None => region_loss(f, &cells, config.delta),
            };
            for ((a, b), c) in g.iter_mut().zip(&gf).zip(&gb) {
                *a += config.lambda_fit * b + config.lambda_b * c;
            }
            let t = terms.get();
            terms.set([t[0] + ln / batches, t[1] + lf / batches, t[2] + lb / batches]);
            Ok((ln + config.lambda_fit * lf + config.lambda_b * lb, g))
        },
        |_, _, _| {
            last_terms.set(terms.replace([0.0; 3]));
            Ok(())
        },
    )?;
    let inside_vals = phi.eval_batch(&cells.inside);
    let outside_vals = phi.eval_batch(&cells.outside);
    let h3 = mask.h.powi(3);
    let final_region = h3
        * (inside_vals.iter().map(|v| 1.0 - eta_delta(*v, config.delta)).sum::<f64>()
            + outside_vals.iter().map(|v| eta_delta(*v, config.delta)).sum::<f64>());
    let epoch_terms = last_terms.get();
    let report = SdfReport {
        normal: epoch_terms[0],
        fit: epoch_terms[1],
        region: epoch_terms[2],
        final_region,
        misclassified_inside: inside_vals.iter().filter(|v| **v >= 0.0).count(),
        misclassified_outside: outside_vals.iter().filter(|v| **v <= 0.0).count(),
        trace,
    };
    log::info!(
        "sdf terms: normal {:.4e}, fit {:.4e}, region {:.4e} (final {:.4e}, vanished: {})",
        report.normal,
        report.fit,
        report.region,
        report.final_region,
        report.region_vanished()
    );
    Ok((
        SdfModel {
            phi,
            heat_ref: heat_ref.to_string(),
            config: *config,
        },
        report,
    ))
}

//! Run configuration: every tunable of the pipeline in one JSON document,
//! with two named profiles.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::field::Architecture;
use crate::heat::{HeatConfig, DEFAULT_TAU, DEFAULT_TAU_HAT};
use crate::orientation::cell_size;
use crate::sdf::SdfConfig;
use crate::surface::FlowConfig;
use crate::train::{FitConfig, TrainSchedule};
use crate::{Error, Result, DOMAIN_HALF_EXTENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 2×64 network, 5 epochs of 200 batches, 2000 samples per batch.
    Quick,
    /// 4×256 network, 50 epochs of 1000 batches, 10000 samples per batch.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Self::Quick),
            "full" => Ok(Self::Full),
            _ => Err(Error::ConfigInvalid(format!("unknown profile '{s}' (quick, full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSettings {
    /// Neighbors required inside each point's mollifier radius.
    pub neighbors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatSettings {
    pub tau: f64,
    pub tau_hat: f64,
    pub near_field_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Half-width of the evaluation band around the surface.
    pub band: f64,
    pub band_points: usize,
    pub surface_samples: usize,
    /// Marching-cubes resolution for reference meshes of analytic shapes.
    pub reference_resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Rescale loaded clouds into `[−1, 1]³`.
    pub normalize: bool,
    pub weights: WeightSettings,
    /// Cells per axis of the orientation grid (cell size `2.4 / dims`).
    pub grid_dims: usize,
    pub fit: FitConfig,
    pub heat: HeatSettings,
    pub sdf: SdfConfig,
    pub eval: EvalSettings,
    pub flow: FlowConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (fit, region_samples, sdf_lr) = match profile {
            Profile::Quick => (
                FitConfig {
                    architecture: Architecture::new(64, 2),
                    schedule: TrainSchedule {
                        epochs: 5,
                        batches_per_epoch: 200,
                        ..TrainSchedule::default()
                    },
                    volume_samples: 2000,
                    surface_samples: 2000,
                },
                Some(4096),
                // a 2×64 network needs the faster step to reach unit slope
                // within 1000 batches
                Some(2e-4),
            ),
            Profile::Full => (
                FitConfig {
                    architecture: Architecture::new(256, 4),
                    schedule: TrainSchedule::default(),
                    volume_samples: 10_000,
                    surface_samples: 10_000,
                },
                None,
                None,
            ),
        };
        let flow = FlowConfig {
            schedule: TrainSchedule {
                epochs: fit.schedule.epochs,
                batches_per_epoch: fit.schedule.batches_per_epoch,
                ..FlowConfig::default().schedule
            },
            batch_size: fit.volume_samples,
            ..FlowConfig::default()
        };
        Self {
            profile,
            seed: 0,
            normalize: true,
            weights: WeightSettings { neighbors: 12 },
            grid_dims: 64,
            fit,
            heat: HeatSettings {
                tau: DEFAULT_TAU,
                tau_hat: DEFAULT_TAU_HAT,
                near_field_only: false,
            },
            sdf: SdfConfig {
                region_samples,
                learning_rate: sdf_lr,
                ..SdfConfig::default()
            },
            eval: EvalSettings {
                band: 0.1,
                band_points: 10_000,
                surface_samples: 10_000,
                reference_resolution: 256,
            },
            flow,
        }
    }

    pub fn grid_h(&self) -> f64 {
        cell_size(self.grid_dims)
    }

    /// Sets the orientation grid from a cell size, which must divide `2.4`.
    pub fn set_grid_h(&mut self, h: f64) -> Result<()> {
        let dims = 2.0 * DOMAIN_HALF_EXTENT / h;
        if !(h > 0.0) || (dims - dims.round()).abs() > 1e-6 * dims || dims.round() < 1.0 {
            return Err(Error::ConfigInvalid(format!("grid h = {h} must divide the box edge 2.4")));
        }
        self.grid_dims = dims.round() as usize;
        Ok(())
    }

    pub fn heat_config(&self) -> HeatConfig {
        HeatConfig {
            tau: self.heat.tau,
            tau_hat: self.heat.tau_hat,
            step: self.fit,
            kappa_grid_dims: self.grid_dims,
            near_field_only: self.heat.near_field_only,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::ConfigInvalid(m));
        if self.grid_dims < 2 {
            return invalid(format!("grid_dims = {} must be ≥ 2", self.grid_dims));
        }
        self.fit.architecture.validate().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.fit.schedule.validate()?;
        self.flow.schedule.validate()?;
        if self.fit.volume_samples == 0 || self.fit.surface_samples == 0 {
            return invalid("sample counts must be positive".into());
        }
        if !(self.heat.tau > 0.0 && self.heat.tau < self.heat.tau_hat) {
            return invalid(format!("0 < τ < τ̂ violated: τ = {}, τ̂ = {}", self.heat.tau, self.heat.tau_hat));
        }
        self.sdf.validate(self.grid_h())?;
        if self.weights.neighbors == 0 {
            return invalid("weights.neighbors must be ≥ 1".into());
        }
        if !(self.eval.band > 0.0) || self.eval.band_points == 0 || self.eval.surface_samples == 0 {
            return invalid("evaluation band and sample counts must be positive".into());
        }
        if self.eval.reference_resolution < 8 {
            return invalid("eval.reference_resolution must be ≥ 8".into());
        }
        if !(self.flow.tau > 0.0 && self.flow.sigma > 0.0) {
            return invalid("flow τ and σ must be positive".into());
        }
        Ok(())
    }

    /// Profile defaults, then the keys present in `overrides` merged on top
    /// (objects merge recursively), then validation.
    pub fn from_json(profile: Profile, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut base, overrides);
        if let Some(p) = overrides.get("profile") {
            let named: Profile = serde_json::from_value(p.clone())
                .map_err(|e| Error::ConfigInvalid(format!("profile: {e}")))?;
            if named != profile {
                base = serde_json::to_value(Self::for_profile(named))?;
                merge(&mut base, overrides);
            }
        }
        let config: Self = serde_json::from_value(base).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        // a run manifest carries its resolved config
        match (value.get("tool"), value.get("config")) {
            (Some(_), Some(config)) => Self::from_json(profile, config),
            _ => Self::from_json(profile, &value),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Full)
    }
}

fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

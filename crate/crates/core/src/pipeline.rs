//! Stage orchestration: in-memory stage runners plus the file-level commands
//! behind the command-line tool. Every file-level command writes
//! `<output>.manifest.json` recording the resolved configuration, input and
//! output hashes, and tool versions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::field::{Architecture, FieldSample, NeuralField, ScalarField};
use crate::heat::{solve_heat, HeatSolution};
use crate::mesh::TriMesh;
use crate::metrics::{evaluate, write_csv, BandSet, MetricsReport, ReferenceMesh};
use crate::oracle::{grid_heat_step, AnalyticShape, CgReport, GridField, SampleMode};
use crate::orientation::{build_region_mask_adaptive, MaskBuild};
use crate::pointcloud::{NormalizationTransform, PointCloud};
use crate::sdf::{solve_sdf, SdfModel, SdfReport};
use crate::surface::{csg_combine, fit_initial_data, marching_cubes, run_flow, CsgOp, FlowDomain, FlowStepReport, SmoothBall};
use crate::train::TrainTrace;
use crate::{Error, Result, Vec3};

/// Transition half-width of the smoothed ball used as flow initial data.
pub const FLOW_BALL_DELTA: f64 = 0.01;

/// Seed offsets of the stages relative to `RunConfig::seed`. The heat stage
/// uses `seed` and `seed + 1` for its two time steps.
pub const SDF_SEED_OFFSET: u64 = 2;
pub const EVAL_SEED_OFFSET: u64 = 3;
pub const FLOW_SEED_OFFSET: u64 = 4;

/// Normalizes (when configured) and computes density-compensating weights.
pub fn prepare_cloud(raw: PointCloud, config: &RunConfig) -> Result<PointCloud> {
    let pc = if config.normalize { raw.normalize_to_domain()? } else { raw };
    pc.with_adaptive_weights(config.weights.neighbors)
}

pub fn run_heat_stage(pc: &PointCloud, config: &RunConfig) -> Result<(HeatSolution, [TrainTrace; 2])> {
    config.validate()?;
    solve_heat(pc, &config.heat_config(), config.seed)
}

#[derive(Debug, Clone)]
pub struct SdfOutcome {
    pub model: SdfModel,
    pub report: SdfReport,
    pub mask: MaskBuild,
}

pub fn run_sdf_stage(pc: &PointCloud, heat: &HeatSolution, heat_ref: &str, config: &RunConfig) -> Result<SdfOutcome> {
    config.validate()?;
    let mask = build_region_mask_adaptive(pc, config.grid_dims)?;
    if mask.doublings > 0 {
        log::warn!(
            "orientation grid coarsened {} time(s) to h = {:.4}",
            mask.doublings,
            mask.mask.h
        );
    }
    let (model, report) = solve_sdf(
        heat,
        heat_ref,
        &mask.mask,
        pc,
        &config.sdf,
        &config.fit,
        config.seed.wrapping_add(SDF_SEED_OFFSET),
    )?;
    Ok(SdfOutcome { model, report, mask })
}

pub fn evaluate_model<F: ScalarField>(
    name: &str,
    phi: &F,
    mesh: &ReferenceMesh,
    band: &BandSet,
    config: &RunConfig,
) -> MetricsReport {
    let mut report = evaluate(
        name,
        phi,
        mesh,
        band,
        config.eval.surface_samples,
        config.seed.wrapping_add(EVAL_SEED_OFFSET),
    );
    report.seeds.insert(0, config.seed);
    report
}

/// Full path of a config entry for the short sweep parameter names.
pub fn sweep_parameter_path(name: &str) -> String {
    match name {
        "lambda_fit" | "lambda_b" | "delta" => format!("sdf.{name}"),
        "tau" | "tau_hat" => format!("heat.{name}"),
        other => other.to_string(),
    }
}

/// Copy of `base` with the dotted entry `path` replaced by `value`.
pub fn with_parameter(base: &RunConfig, path: &str, value: &Value) -> Result<RunConfig> {
    let mut doc = serde_json::to_value(base)?;
    let mut slot = &mut doc;
    for key in path.split('.') {
        slot = slot
            .get_mut(key)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown config entry '{path}'")))?;
    }
    *slot = value.clone();
    let config: RunConfig = serde_json::from_value(doc).map_err(|e| Error::ConfigInvalid(format!("{path}: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub reports: Vec<MetricsReport>,
    /// `(value, error message)` of runs that failed.
    pub failures: Vec<(Value, String)>,
}

/// Runs the pipeline once per value of `param` on an already prepared cloud.
/// The heat stage is shared when the parameter only affects later stages.
pub fn sweep(
    base: &RunConfig,
    param: &str,
    values: &[Value],
    pc: &PointCloud,
    mesh: &ReferenceMesh,
    band: &BandSet,
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one value".into()));
    }
    let path = sweep_parameter_path(param);
    let configs: Vec<Result<RunConfig>> = values.iter().map(|v| with_parameter(base, &path, v)).collect();
    if let Some(Err(e)) = configs.iter().find(|c| matches!(c, Err(Error::ConfigInvalid(m)) if m.starts_with("unknown"))) {
        return Err(Error::ConfigInvalid(e.to_string()));
    }
    let shared_heat = if path.starts_with("sdf.") || path.starts_with("eval.") {
        let (heat, _) = run_heat_stage(pc, base)?;
        let digest = heat.to_checkpoint(Value::Null)?.digest()?;
        Some((heat, digest))
    } else {
        None
    };
    let mut outcome = SweepOutcome::default();
    for (value, config) in values.iter().zip(configs) {
        let label = format!("{param}={}", value_label(value));
        let run = || -> Result<MetricsReport> {
            let config = config?;
            let owned;
            let (heat, digest) = match &shared_heat {
                Some((h, d)) => (h, d.clone()),
                None => {
                    owned = run_heat_stage(pc, &config)?.0;
                    let d = owned.to_checkpoint(Value::Null)?.digest()?;
                    (&owned, d)
                }
            };
            let sdf = run_sdf_stage(pc, heat, &digest, &config)?;
            Ok(evaluate_model(&label, &sdf.model.phi, mesh, band, &config))
        };
        match run() {
            Ok(r) => {
                log::info!("{}", r.csv_row());
                outcome.reports.push(r);
            }
            Err(e) => {
                log::error!("sweep run {label} failed: {e}");
                outcome.failures.push((value.clone(), e.to_string()));
            }
        }
    }
    Ok(outcome)
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A field given in another frame, evaluated in this one: `value(x) =
/// inner(map(x)) / map.scale`, which keeps distances in this frame's units.
pub struct Reframed<F> {
    pub inner: F,
    pub map: NormalizationTransform,
}

impl<F: ScalarField> ScalarField for Reframed<F> {
    fn value(&self, x: &Vec3) -> f64 {
        self.inner.value(&self.map.apply(x)) / self.map.scale
    }

    fn sample(&self, x: &Vec3) -> FieldSample {
        let s = self.inner.sample(&self.map.apply(x));
        FieldSample {
            value: s.value / self.map.scale,
            gradient: s.gradient,
        }
    }

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        let mapped: Vec<Vec3> = points.iter().map(|p| self.map.apply(p)).collect();
        self.inner.values(&mapped).into_iter().map(|v| v / self.map.scale).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Writes the run manifest next to `output`.
pub fn write_manifest(command: &str, config: &Value, inputs: &[&Path], outputs: &[&Path], extra: Value) -> Result<PathBuf> {
    let files = |paths: &[&Path]| -> Result<Vec<Value>> {
        paths
            .iter()
            .map(|p| Ok(json!({"path": p.display().to_string(), "sha256": sha256_file(p)?})))
            .collect()
    };
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "threads": rayon::current_num_threads(),
        "config": config,
        "inputs": files(inputs)?,
        "outputs": files(outputs)?,
        "details": extra,
    });
    let primary = outputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("manifest needs at least one output".into()))?;
    let path = manifest_path(primary);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Run metadata stored in every checkpoint this module writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    config: RunConfig,
    cloud_sha256: String,
    transform: NormalizationTransform,
}

fn run_record(c: &Checkpoint) -> Result<RunRecord> {
    serde_json::from_value(c.metadata["run"].clone())
        .map_err(|e| Error::VersionMismatch(format!("checkpoint lacks run metadata: {e}")))
}

fn load_prepared(cloud: &Path, config: &RunConfig) -> Result<(PointCloud, String)> {
    let hash = sha256_file(cloud)?;
    Ok((prepare_cloud(PointCloud::load(cloud)?, config)?, hash))
}

pub fn heat_command(config: &RunConfig, cloud: &Path, out: &Path) -> Result<HeatSolution> {
    config.validate()?;
    let (pc, hash) = load_prepared(cloud, config)?;
    let (heat, traces) = run_heat_stage(&pc, config)?;
    let record = RunRecord {
        config: config.clone(),
        cloud_sha256: hash,
        transform: pc.transform,
    };
    save_checkpoint(&heat.to_checkpoint(serde_json::to_value(&record)?)?, out)?;
    write_manifest(
        "heat",
        &serde_json::to_value(config)?,
        &[cloud],
        &[out],
        json!({"kappa": heat.kappa, "epsilon": pc.epsilon, "traces": traces}),
    )?;
    Ok(heat)
}

pub fn sdf_command(config: &RunConfig, cloud: &Path, heat_path: &Path, out: &Path) -> Result<SdfOutcome> {
    config.validate()?;
    let ckpt = load_checkpoint(heat_path)?;
    let heat = HeatSolution::from_checkpoint(&ckpt)?;
    let heat_run = run_record(&ckpt)?;
    let (pc, hash) = load_prepared(cloud, config)?;
    if hash != heat_run.cloud_sha256 {
        return Err(Error::InvalidArgument(format!(
            "{} is not the cloud the heat stage was trained on",
            cloud.display()
        )));
    }
    let outcome = run_sdf_stage(&pc, &heat, &ckpt.digest()?, config)?;
    let record = RunRecord {
        config: config.clone(),
        cloud_sha256: hash,
        transform: pc.transform,
    };
    save_checkpoint(&outcome.model.to_checkpoint(serde_json::to_value(&record)?)?, out)?;
    write_manifest(
        "sdf",
        &serde_json::to_value(config)?,
        &[cloud, heat_path],
        &[out],
        json!({"report": outcome.report, "mask": outcome.mask.mask.counts(), "mask_doublings": outcome.mask.doublings}),
    )?;
    Ok(outcome)
}

/// Loads an SDF checkpoint with the transform from original to model
/// coordinates.
pub fn load_sdf(path: &Path) -> Result<(SdfModel, RunConfig, NormalizationTransform)> {
    let ckpt = load_checkpoint(path)?;
    let model = SdfModel::from_checkpoint(&ckpt)?;
    let run = run_record(&ckpt)?;
    Ok((model, run.config, run.transform))
}

/// Reference mesh in model coordinates.
fn model_frame_mesh(mesh: &TriMesh, t: &NormalizationTransform) -> Result<ReferenceMesh> {
    let vertices = mesh.vertices.iter().map(|v| t.apply(v)).collect();
    ReferenceMesh::new(TriMesh::new(vertices, mesh.triangles.clone())?)
}

/// Evaluates a model against a ground-truth mesh given in original
/// coordinates. The band file holds model-frame points; it is generated
/// from the mesh and written when missing.
pub fn eval_command(sdf: &Path, mesh: &Path, band: &Path, out: &Path, model_name: Option<&str>) -> Result<MetricsReport> {
    let (model, config, transform) = load_sdf(sdf)?;
    let reference = model_frame_mesh(&TriMesh::read_obj(mesh)?, &transform)?;
    let band_set = if band.exists() {
        BandSet::read(band)?
    } else {
        log::info!("generating evaluation band {}", band.display());
        let b = BandSet::from_mesh(&reference, config.eval.band, config.eval.band_points, config.seed)?;
        b.write(band)?;
        b
    };
    let name = model_name.map(str::to_string).unwrap_or_else(|| {
        sdf.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let report = evaluate_model(&name, &model.phi, &reference, &band_set, &config);
    write_csv(std::slice::from_ref(&report), out)?;
    write_manifest("eval", &serde_json::to_value(&config)?, &[sdf, mesh, band], &[out], serde_json::to_value(&report)?)?;
    Ok(report)
}

fn to_original_frame(mut mesh: TriMesh, t: &NormalizationTransform) -> TriMesh {
    let inv = t.inverted();
    mesh.vertices.iter_mut().for_each(|v| *v = inv.apply(v));
    mesh
}

/// Zero level set of a model as OBJ, in original coordinates.
pub fn extract_command(sdf: &Path, resolution: usize, out: &Path) -> Result<TriMesh> {
    let (model, config, transform) = load_sdf(sdf)?;
    let mesh = to_original_frame(marching_cubes(&model.phi, resolution, 0.0)?, &transform);
    mesh.write_obj(out)?;
    write_manifest(
        "extract",
        &serde_json::to_value(&config)?,
        &[sdf],
        &[out],
        json!({"resolution": resolution, "vertices": mesh.vertices.len(), "triangles": mesh.triangles.len()}),
    )?;
    Ok(mesh)
}

/// Boolean combination of two models, extracted on the grid of the first
/// model's frame and written in original coordinates.
pub fn csg_command(a: &Path, b: &Path, op: CsgOp, resolution: usize, out: &Path) -> Result<TriMesh> {
    let (ma, config, ta) = load_sdf(a)?;
    let (mb, _, tb) = load_sdf(b)?;
    let fb = Reframed {
        inner: &mb.phi,
        map: tb.compose(&ta.inverted()),
    };
    let combined = csg_combine(&ma.phi, fb, op);
    let mesh = to_original_frame(marching_cubes(&combined, resolution, 0.0)?, &ta);
    mesh.write_obj(out)?;
    write_manifest(
        "csg",
        &serde_json::to_value(&config)?,
        &[a, b],
        &[out],
        json!({"op": op, "resolution": resolution, "triangles": mesh.triangles.len()}),
    )?;
    Ok(mesh)
}

/// Level-set heat flow from a smoothed ball (center and radius in original
/// coordinates). Writes `<prefix><k>.ckpt` for every iterate and
/// `<prefix>report.json`.
pub fn flow_command(
    config: &RunConfig,
    sdf: &Path,
    ball: [f64; 4],
    steps: usize,
    prefix: &str,
) -> Result<Vec<FlowStepReport>> {
    config.validate()?;
    let (model, _, transform) = load_sdf(sdf)?;
    let center = transform.apply(&Vec3::new(ball[0], ball[1], ball[2]));
    let radius = ball[3] * transform.scale;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {}", ball[3])));
    }
    let initial = SmoothBall {
        center,
        radius,
        delta: FLOW_BALL_DELTA,
    };
    let seed = config.seed.wrapping_add(FLOW_SEED_OFFSET);
    let domain = FlowDomain::new(&model.phi, &config.flow, seed)?;
    let arch = Architecture::new(config.fit.architecture.hidden_dim, config.fit.architecture.hidden_layers);
    let (w0, _) = fit_initial_data(&domain, &initial, NeuralField::init_siren(arch, seed)?, &config.flow, seed)?;
    let (states, reports) = run_flow(&domain, w0, steps, &config.flow, seed)?;
    let mut outputs = Vec::new();
    for s in &states {
        let path = PathBuf::from(format!("{prefix}{}.ckpt", s.step_index));
        let meta = json!({"stage": "flow", "step": s.step_index, "tau": s.tau_pde, "sigma": s.sigma, "sdf": sha256_file(sdf)?});
        save_checkpoint(&Checkpoint::new(meta).with_field("w", s.w.clone()), &path)?;
        outputs.push(path);
    }
    let report_path = PathBuf::from(format!("{prefix}report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&reports)?)?;
    outputs.insert(0, report_path);
    let refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        "flow",
        &serde_json::to_value(config)?,
        &[sdf],
        &refs,
        json!({"ball": ball, "steps": steps}),
    )?;
    Ok(reports)
}

pub fn oracle_sample_command(shape: &AnalyticShape, mode: SampleMode, n: usize, seed: u64, out: &Path) -> Result<PointCloud> {
    let pc = shape.sample(n, mode, seed)?;
    pc.write_xyz(out)?;
    write_manifest(
        "oracle sample",
        &json!({"shape": shape, "mode": mode, "n": n, "seed": seed}),
        &[],
        &[out],
        Value::Null,
    )?;
    Ok(pc)
}

/// Grid heat step on a cloud with the pipeline's normalization and weights.
pub fn oracle_heat_command(config: &RunConfig, cloud: &Path, dims: usize, tau: f64, out: &Path) -> Result<(GridField, CgReport)> {
    let (pc, _) = load_prepared(cloud, config)?;
    let (grid, report) = grid_heat_step(&pc, tau, dims)?;
    grid.write(out)?;
    write_manifest(
        "oracle heat",
        &json!({"dims": dims, "tau": tau, "normalize": config.normalize, "neighbors": config.weights.neighbors}),
        &[cloud],
        &[out],
        json!({"cg_iterations": report.iterations}),
    )?;
    Ok((grid, report))
}

/// Sweep over files: writes `<out_dir>/sweep.csv` and
/// `<out_dir>/failures.json`.
pub fn sweep_command(
    config: &RunConfig,
    param: &str,
    values: &[Value],
    cloud: &Path,
    mesh: &Path,
    band: &Path,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one value".into()));
    }
    let (pc, _) = load_prepared(cloud, config)?;
    let reference = model_frame_mesh(&TriMesh::read_obj(mesh)?, &pc.transform)?;
    let band_set = if band.exists() {
        BandSet::read(band)?
    } else {
        let b = BandSet::from_mesh(&reference, config.eval.band, config.eval.band_points, config.seed)?;
        b.write(band)?;
        b
    };
    let outcome = sweep(config, param, values, &pc, &reference, &band_set)?;
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("sweep.csv");
    write_csv(&outcome.reports, &csv)?;
    let failures = out_dir.join("failures.json");
    std::fs::write(&failures, serde_json::to_string_pretty(&outcome.failures)?)?;
    write_manifest(
        "sweep",
        &serde_json::to_value(config)?,
        &[cloud, mesh, band],
        &[&csv, &failures],
        json!({"param": param, "values": values}),
    )?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    #[test]
    fn parameter_override() {
        let base = RunConfig::for_profile(Profile::Quick);
        let c = with_parameter(&base, &sweep_parameter_path("lambda_fit"), &json!(700.0)).unwrap();
        assert_eq!(c.sdf.lambda_fit, 700.0);
        assert!(matches!(with_parameter(&base, "sdf.nope", &json!(1)), Err(Error::ConfigInvalid(_))));
        assert!(matches!(with_parameter(&base, "sdf.delta", &json!(0.05)), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn reframing_preserves_distances() {
        let sphere = AnalyticShape::sphere();
        let t = NormalizationTransform {
            scale: 2.0,
            translation: [0.1, -0.2, 0.3],
        };
        // the sphere lives in frame `t`; look at it from the identity frame
        let f = Reframed { inner: sphere, map: t };
        let center = t.inverted().apply(&Vec3::zeros());
        let p = center + Vec3::new(0.5, 0.0, 0.0);
        assert!((f.value(&p) - (0.5 - 0.25)).abs() < 1e-12);
        let round = t.compose(&t.inverted());
        assert!((round.scale - 1.0).abs() < 1e-15 && Vec3::from(round.translation).norm() < 1e-15);
    }

    #[test]
    fn manifest_next_to_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("cloud.xyz");
        oracle_sample_command(&AnalyticShape::sphere(), SampleMode::Uniform, 100, 1, &out).unwrap();
        let m: Value = serde_json::from_str(&std::fs::read_to_string(manifest_path(&out)).unwrap()).unwrap();
        assert_eq!(m["outputs"][0]["sha256"], json!(sha256_file(&out).unwrap()));
        assert_eq!(m["config"]["n"], json!(100));
        assert_eq!(PointCloud::load(&out).unwrap().len(), 100);
    }

    #[test]
    fn empty_sweep_rejected() {
        let pc = AnalyticShape::sphere().sample(100, SampleMode::Uniform, 1).unwrap();
        let mesh = ReferenceMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.5, 1)).unwrap();
        let band = BandSet {
            points: vec![],
            distances: vec![],
            seed: 0,
        };
        let r = sweep(&RunConfig::for_profile(Profile::Quick), "lambda_fit", &[], &pc, &mesh, &band);
        assert!(matches!(r, Err(Error::ConfigInvalid(_))));
    }
}

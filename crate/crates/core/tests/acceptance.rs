//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed.
//! Positional arguments select criteria by number or name substring;
//! criterion 8 (full profile, hours of CPU time) runs only with `--ignored`
//! or `--include-ignored`.

mod common;

use std::cell::OnceCell;
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use heatsdf::field::{NeuralField, ScalarField};
use heatsdf::heat::{blend_mu, heat_loss, HeatSolution};
use heatsdf::metrics::{e_eik, e_sdf, lower_median, BandSet, ReferenceMesh};
use heatsdf::oracle::{conjugate_gradient, deposit, grid_heat_step, pearson, AnalyticShape, GridField, GridOperator, SampleMode};
use heatsdf::orientation::{CellLabel, RegionMask};
use heatsdf::pipeline::{self, SdfOutcome};
use heatsdf::sampling::{stream_rng, SurfaceBatch, VolumeBatch};
use heatsdf::sdf::{eta, fit_loss, normal_loss, region_loss, RegionBatch};
use heatsdf::surface::{
    csg_combine, fit_initial_data, flow_energy, flow_loss, marching_cubes, run_flow, surface_heat_flow_step, CsgOp,
    FlowDomain, SmoothBall,
};
use heatsdf::{FieldSample, PointCloud, Profile, RunConfig, TriMesh, Vec3, DOMAIN_VOLUME};
use rand::Rng;
use serde_json::json;

struct Outcome {
    pass: bool,
    details: String,
}

impl Outcome {
    fn new(pass: bool, details: String) -> Self {
        Self { pass, details }
    }
}

type Check = heatsdf::Result<Outcome>;

/// Sphere cloud and trained stages shared by criteria 6, 7 and 10.
struct SphereRun {
    config: RunConfig,
    cloud: PointCloud,
    heat: HeatSolution,
    sdf: OnceCell<SdfOutcome>,
}

const SPHERE_SEED: u64 = 1;

fn sphere_config() -> RunConfig {
    let mut c = RunConfig::for_profile(Profile::Quick);
    c.seed = SPHERE_SEED;
    // analytic clouds already sit in the domain at their true scale
    c.normalize = false;
    c
}

impl SphereRun {
    fn new() -> heatsdf::Result<Self> {
        let config = sphere_config();
        let raw = AnalyticShape::sphere().sample(5000, SampleMode::Uniform, SPHERE_SEED)?;
        let cloud = pipeline::prepare_cloud(raw, &config)?;
        let (heat, _) = pipeline::run_heat_stage(&cloud, &config)?;
        Ok(Self {
            config,
            cloud,
            heat,
            sdf: OnceCell::new(),
        })
    }

    fn sdf(&self) -> heatsdf::Result<&SdfOutcome> {
        if self.sdf.get().is_none() {
            let outcome = pipeline::run_sdf_stage(&self.cloud, &self.heat, "acceptance", &self.config)?;
            let _ = self.sdf.set(outcome);
        }
        Ok(self.sdf.get().expect("set above"))
    }
}

fn sphere_band(n: usize) -> heatsdf::Result<BandSet> {
    let sphere = AnalyticShape::sphere();
    BandSet::from_oracle(|p| sphere.sdf(p), 0.1, n, SPHERE_SEED + 100)
}

fn relative_error(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

fn criterion_1() -> Check {
    let h = 1e-6;
    let mut worst = [0.0f64; 4];
    for case in 0..100u64 {
        let net = common::toy_net(case);
        let pts = common::random_points(16, case, 1.2);
        for p in &pts[..4] {
            let g = net.eval_with_gradient(p).gradient;
            let mut fd = Vec3::zeros();
            for a in 0..3 {
                let (mut hi, mut lo) = (*p, *p);
                hi[a] += h;
                lo[a] -= h;
                fd[a] = (net.eval(&hi) - net.eval(&lo)) / (2.0 * h);
            }
            worst[0] = worst[0].max(relative_error(&g, &fd));
        }
        let vol = VolumeBatch {
            points: pts.clone(),
            domain_volume: DOMAIN_VOLUME,
        };
        let surf = SurfaceBatch {
            points: common::random_points(8, case + 1000, 0.6),
            weights: vec![0.125; 8],
        };
        worst[1] = worst[1].max(common::parameter_gradient_error(&net, |f| heat_loss(f, &vol, &surf, 0.005)));

        let mut rng = stream_rng(case, 9);
        let targets: Vec<Vec3> = (0..pts.len())
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
            .collect();
        let cells = RegionBatch {
            inside: common::random_points(8, case + 2000, 0.3),
            outside: common::random_points(8, case + 3000, 1.2),
            inside_weight: 0.01,
            outside_weight: 0.01,
        };
        // a wide transition so that the blended branches are exercised
        let delta = 0.3;
        worst[2] = worst[2].max(common::parameter_gradient_error(&net, |f| {
            let (ln, mut g) = normal_loss(f, &targets, &vol, delta).unwrap();
            let (lf, gf) = fit_loss(f, &surf);
            let (lb, gb) = region_loss(f, &cells, delta);
            for ((a, b), c) in g.iter_mut().zip(&gf).zip(&gb) {
                *a += 100.0 * b + c;
            }
            (ln + 100.0 * lf + lb, g)
        }));

        let phi_net = common::toy_net(case + 500);
        let phi: Vec<FieldSample> = pts.iter().map(|p| phi_net.eval_with_gradient(p)).collect();
        let wk: Vec<f64> = (0..pts.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst[3] = worst[3].max(common::parameter_gradient_error(&net, |f| {
            flow_loss(f, &pts, &phi, &wk, 0.1, 0.01, 2.0)
        }));
    }
    let pass = worst.iter().all(|&e| e < 1e-3);
    Ok(Outcome::new(
        pass,
        format!(
            "max relative error over 100 toy networks: spatial {:.1e}, heat {:.1e}, sdf {:.1e}, flow {:.1e} (< 1e-3)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

fn criterion_2() -> Check {
    let pc = PointCloud::new(vec![Vec3::zeros(), Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)])?;
    let w = pc.compute_adaptive_weights(0.3)?.weights;
    let example_err = [0.25, 0.25, 0.5].iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (mut sum_err, mut dup_err) = (0.0f64, 0.0f64);
    for seed in 0..50u64 {
        let n = 50 + 10 * seed as usize;
        let points = common::random_points(n, seed + 7, 1.0);
        let pc = PointCloud::new(points.clone())?;
        let eps = pc.select_epsilon(12)?;
        let single = pc.compute_adaptive_weights(eps)?;
        sum_err = sum_err.max((single.weights.iter().sum::<f64>() - 1.0).abs());
        let mut doubled = points.clone();
        doubled.extend(points);
        let dc = PointCloud::new(doubled)?.compute_adaptive_weights(eps)?;
        for i in 0..n {
            let pair = dc.weights[i] + dc.weights[n + i];
            dup_err = dup_err.max((pair - single.weights[i]).abs() / single.weights[i]);
        }
    }
    Ok(Outcome::new(
        example_err <= 1e-12 && sum_err < 1e-12 && dup_err < 1e-9,
        format!(
            "example weights {w:.6?} (error {example_err:.1e}); 50 clouds: |Σω − 1| ≤ {sum_err:.1e}, duplication error ≤ {dup_err:.1e}"
        ),
    ))
}

fn criterion_3() -> Check {
    let idx = |i: usize, j: usize, k: usize| (i * 5 + j) * 5 + k;
    let mut shell = vec![false; 125];
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..5 {
                let r = [i, j, k].iter().map(|&c| (c as i64 - 2).abs()).max().unwrap();
                shell[idx(i, j, k)] = r == 1;
            }
        }
    }
    let counts = RegionMask::from_occupancy(Vec3::zeros(), 1.0, [5; 3], &shell)?.counts();
    let fixture = (counts.inside, counts.interfacial, counts.outside) == (1, 26, 98);
    let mut rng = stream_rng(3, 0);
    let mut agree = 0;
    for _ in 0..100 {
        let dims = [rng.random_range(3..=32), rng.random_range(3..=32), rng.random_range(3..=32)];
        let p: f64 = rng.random_range(0.05..0.6);
        let occ: Vec<bool> = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.random_bool(p)).collect();
        let expected = common::brute_force_outside(dims, &occ);
        let ok = match RegionMask::from_occupancy(Vec3::zeros(), 0.1, dims, &occ) {
            Ok(m) => m.labels.iter().enumerate().all(|(i, l)| {
                *l == if occ[i] {
                    CellLabel::Interfacial
                } else if expected[i] {
                    CellLabel::Outside
                } else {
                    CellLabel::Inside
                }
            }),
            Err(heatsdf::Error::NoOutsideSeed) => !expected.iter().any(|&o| o),
            Err(_) => false,
        };
        agree += ok as usize;
    }
    Ok(Outcome::new(
        fixture && agree == 100,
        format!(
            "shell fixture ({}, {}, {}); brute-force agreement on {agree}/100 random grids",
            counts.inside, counts.interfacial, counts.outside
        ),
    ))
}

/// Largest gap between one-sided difference quotients at the knots.
fn c1_gap(f: &dyn Fn(f64) -> f64, knots: &[f64], h: f64) -> f64 {
    knots
        .iter()
        .map(|&t| {
            let left = (f(t) - f(t - h)) / h;
            let right = (f(t + h) - f(t)) / h;
            (left - right).abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_4() -> Check {
    let delta = 0.005;
    let ed = |s: f64| heatsdf::sdf::eta_delta(s, delta);
    let values = ed(0.0) == 0.5 && ed(-2.0 * delta) == 1.0 && ed(2.0 * delta) == 0.0;
    let mu_values = blend_mu(0.0) == 1.0 && blend_mu(1.0) == 0.0;
    let gap_eta = c1_gap(&eta, &[-1.0, 1.0], 1e-8);
    let gap_mu = c1_gap(&blend_mu, &[0.0, 1.0], 1e-8);
    // slopes of η_δ scale like 1/δ and its steps like δ
    let gap_eta_delta = c1_gap(&ed, &[-delta, delta], 1e-8 * delta) * delta;
    let pass = values && mu_values && gap_eta < 1e-6 && gap_mu < 1e-6 && gap_eta_delta < 1e-6;
    Ok(Outcome::new(
        pass,
        format!(
            "η_δ(0) = {}, η_δ(−2δ) = {}, η_δ(2δ) = {}, μ(0) = {}, μ(1) = {}; slope jumps η {gap_eta:.1e}, δ·η_δ {gap_eta_delta:.1e}, μ {gap_mu:.1e}",
            ed(0.0),
            ed(-2.0 * delta),
            ed(2.0 * delta),
            blend_mu(0.0),
            blend_mu(1.0)
        ),
    ))
}

fn manufactured_error(dims: usize, tau: f64) -> heatsdf::Result<f64> {
    let k = std::f64::consts::PI / heatsdf::DOMAIN_HALF_EXTENT;
    let exact = move |x: &Vec3| x.iter().map(|c| (k * c).cos()).product::<f64>();
    let op = GridOperator::new(dims, tau)?;
    let u = GridField::from_fn(dims, exact)?;
    let rhs: Vec<f64> = u
        .values
        .iter()
        .zip(op.lumped_mass())
        .map(|(v, m)| m * v * (1.0 + 3.0 * tau * k * k))
        .collect();
    let (sol, _) = conjugate_gradient(&op, &rhs, 1e-12, 10_000)?;
    Ok(sol.iter().zip(&u.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn criterion_5() -> Check {
    let ratio = manufactured_error(16, 0.1)? / manufactured_error(32, 0.1)?;
    let pc = AnalyticShape::torus().sample(3000, SampleMode::Nonuniform, 5)?.with_adaptive_weights(12)?;
    let mut worst = 0.0f64;
    for dims in [16, 33, 48] {
        let b = deposit(&pc, dims)?;
        worst = worst.max((b.iter().sum::<f64>() - pc.weights.iter().sum::<f64>()).abs());
    }
    Ok(Outcome::new(
        (3.2..=4.8).contains(&ratio) && worst < 1e-12,
        format!("convergence ratio 16→32: {ratio:.3} (in [3.2, 4.8]); deposit mass error {worst:.1e}"),
    ))
}

fn criterion_6(run: &SphereRun) -> Check {
    let band = sphere_band(10_000)?;
    let cos: Vec<f64> = band
        .points
        .iter()
        .map(|p| {
            let g = run.heat.u_near.eval_with_gradient(p).gradient;
            let away = p.normalize() * (p.norm() - 0.5).signum();
            -g.normalize().dot(&away)
        })
        .collect();
    let median = lower_median(&cos);
    let (grid, _) = grid_heat_step(&run.cloud, run.config.heat.tau, 48)?;
    let nodes: Vec<Vec3> = grid.nodes().into_iter().filter(|p| (p.norm() - 0.5).abs() < 0.1).collect();
    let corr = pearson(&run.heat.u_near.values(&nodes), &grid.values(&nodes));
    Ok(Outcome::new(
        median > 0.95 && corr > 0.95,
        format!(
            "median cosine to the radial direction {median:.4} (> 0.95); correlation with the 48³ grid solution on {} band nodes {corr:.4} (> 0.95)",
            nodes.len()
        ),
    ))
}

fn criterion_7(run: &SphereRun) -> Check {
    let sdf = run.sdf()?;
    let phi = &sdf.model.phi;
    let band = sphere_band(10_000)?;
    let err = lower_median(
        &band
            .points
            .iter()
            .zip(phi.values(&band.points))
            .map(|(p, v)| (v - (p.norm() - 0.5)).abs())
            .collect::<Vec<_>>(),
    );
    let eik = e_eik(phi, &band.points);
    let mask = &sdf.mask.mask;
    let inside = mask.cells_of(CellLabel::Inside);
    let outside = mask.cells_of(CellLabel::Outside);
    let correct = phi.values(&inside).iter().filter(|v| **v < 0.0).count()
        + phi.values(&outside).iter().filter(|v| **v > 0.0).count();
    let total = inside.len() + outside.len();
    let rate = correct as f64 / total as f64;
    Ok(Outcome::new(
        err < 0.02 && eik < 0.2 && rate >= 0.99,
        format!(
            "median |φ − (|x| − 0.5)| {err:.4} (< 0.02); median eikonal residual {eik:.4} (< 0.2); sign correct at {correct}/{total} cell centers ({:.2}%, ≥ 99%)",
            100.0 * rate
        ),
    ))
}

fn components_and_closed(mesh: &TriMesh) -> (usize, bool) {
    let n = mesh.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &mesh.triangles {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let mut roots: Vec<usize> = mesh.triangles.iter().map(|t| find(&mut parent, t[0])).collect();
    roots.sort_unstable();
    roots.dedup();
    (roots.len(), edges.values().all(|&c| c == 2))
}

fn criterion_8() -> Check {
    let shape = AnalyticShape::capped_torus();
    let mut config = RunConfig::for_profile(Profile::Full);
    config.normalize = false;
    let band = BandSet::from_oracle(|p| shape.sdf(p), config.eval.band, config.eval.band_points, 8)?;
    let mut results = Vec::new();
    for mode in [SampleMode::Uniform, SampleMode::Nonuniform] {
        let raw = shape.sample(10_000, mode, 8)?;
        let pc = pipeline::prepare_cloud(raw, &config)?;
        let (heat, _) = pipeline::run_heat_stage(&pc, &config)?;
        let sdf = pipeline::run_sdf_stage(&pc, &heat, "acceptance", &config)?;
        let phi = &sdf.model.phi;
        let mesh = marching_cubes(phi, 128, 0.0)?;
        results.push((e_sdf(phi, &band), e_eik(phi, &band.points), components_and_closed(&mesh)));
    }
    let (u, nu) = (results[0], results[1]);
    let pass = u.0 < 0.01 && u.1 < 0.15 && (nu.0 - u.0).abs() < 0.005 && nu.2 == (1, true);
    Ok(Outcome::new(
        pass,
        format!(
            "uniform E_SDF {:.5} (< 0.01), E_eik {:.5} (< 0.15); nonuniform E_SDF {:.5} (|Δ| < 0.005), {} component(s), closed {}",
            u.0, u.1, nu.0, nu.2 .0, nu.2 .1
        ),
    ))
}

fn criterion_9() -> Check {
    let torus = AnalyticShape::torus();
    let lambdas = [10.0, 100.0, 700.0];
    let values: Vec<serde_json::Value> = lambdas.iter().map(|l| json!(l)).collect();
    let mesh = ReferenceMesh::new(torus.reference_mesh(128)?)?;
    let mut recon = Vec::new();
    let mut eik = Vec::new();
    for seed in [11u64, 12, 13] {
        let mut config = RunConfig::for_profile(Profile::Quick);
        config.seed = seed;
        config.normalize = false;
        let pc = pipeline::prepare_cloud(torus.sample(5000, SampleMode::Uniform, seed)?, &config)?;
        let band = BandSet::from_oracle(|p| torus.sdf(p), 0.1, 10_000, seed)?;
        let outcome = pipeline::sweep(&config, "lambda_fit", &values, &pc, &mesh, &band)?;
        if !outcome.failures.is_empty() {
            return Ok(Outcome::new(false, format!("seed {seed}: failed runs {:?}", outcome.failures)));
        }
        recon.push(outcome.reports.iter().map(|r| r.e_recon_surface).collect::<Vec<_>>());
        eik.push(outcome.reports.iter().map(|r| r.e_eik).collect::<Vec<_>>());
    }
    // majority vote over seeds for each consecutive pair of λ_fit values
    let mut inversions = 0;
    for i in 0..lambdas.len() - 1 {
        let recon_ok = recon.iter().filter(|r| r[i + 1] <= r[i]).count() >= 2;
        let eik_ok = eik.iter().filter(|e| e[i + 1] >= e[i]).count() >= 2;
        inversions += (!recon_ok) as usize + (!eik_ok) as usize;
    }
    let fmt = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| r.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join("/"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(Outcome::new(
        inversions <= 1,
        format!(
            "λ_fit 10/100/700 per seed: E_recon_S [{}], E_eik [{}]; majority-vote inversions {inversions} (≤ 1)",
            fmt(&recon),
            fmt(&eik)
        ),
    ))
}

fn criterion_10(run: &SphereRun) -> Check {
    let phi = &run.sdf()?.model.phi;
    let config = &run.config;
    let seed = config.seed.wrapping_add(pipeline::FLOW_SEED_OFFSET);
    let domain = FlowDomain::new(phi, &config.flow, seed)?;
    let ball = SmoothBall {
        center: Vec3::new(0.5, 0.0, 0.0),
        radius: 0.2,
        delta: pipeline::FLOW_BALL_DELTA,
    };
    let arch = config.fit.architecture;
    let (w0, _) = fit_initial_data(&domain, &ball, NeuralField::init_siren(arch, seed)?, &config.flow, seed)?;
    let (_, reports) = run_flow(&domain, w0, 2, &config.flow, seed)?;
    let monotone = reports.iter().all(|r| r.is_monotone(1e-3));
    let bounded = reports.iter().all(|r| r.energy_before >= 0.0 && r.energy_after >= 0.0);
    let steps: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.4e} → {:.4e}", r.energy_before, r.energy_after))
        .collect();

    let constant = NeuralField::constant(arch, 0.7)?;
    let (w1, report) = surface_heat_flow_step(&domain, &constant, constant.clone(), &config.flow, seed)?;
    let val = &domain.validation;
    let vw = val.band_volume / val.points.len() as f64;
    let wk = constant.values(&val.points);
    let fidelity = flow_energy(&w1, &val.points, &val.phi, &wk, vw, 0.0, config.flow.sigma);
    let relative = fidelity / report.fidelity_scale;
    Ok(Outcome::new(
        monotone && bounded && relative < 1e-6,
        format!(
            "held-out energy per step [{}] (non-negative, no increase beyond 1e-3 of the fidelity scale); constant data: fidelity {relative:.1e} of its scale (< 1e-6)",
            steps.join(", ")
        ),
    ))
}

fn criterion_11() -> Check {
    let a = AnalyticShape::Sphere {
        center: [-0.2, 0.05, 0.0],
        radius: 0.45,
    };
    let b = AnalyticShape::Sphere {
        center: [0.25, -0.1, 0.1],
        radius: 0.35,
    };
    let points = common::random_points(1_000_000, 11, 1.2);
    let union = csg_combine(&a, &b, CsgOp::Union);
    let inter = csg_combine(&a, &b, CsgOp::Intersection);
    let (va, vb) = (a.values(&points), b.values(&points));
    let (vu, vi) = (union.values(&points), inter.values(&points));
    let mut mismatches = 0;
    for i in 0..points.len() {
        let (ia, ib) = (va[i] < 0.0, vb[i] < 0.0);
        mismatches += ((vu[i] < 0.0) != (ia || ib)) as usize + ((vi[i] < 0.0) != (ia && ib)) as usize;
    }
    Ok(Outcome::new(
        mismatches == 0,
        format!("{mismatches} indicator mismatches over 10⁶ points for union and intersection"),
    ))
}

fn tiny_config() -> serde_json::Value {
    json!({
        "profile": "quick",
        "seed": 12,
        "fit": {
            "architecture": {"hidden_dim": 16, "hidden_layers": 2},
            "schedule": {"epochs": 2, "batches_per_epoch": 10},
            "volume_samples": 500,
            "surface_samples": 500
        },
        "sdf": {"region_samples": 512},
        "eval": {"band_points": 2000, "surface_samples": 2000, "reference_resolution": 64}
    })
}

fn pipeline_csv(dir: &Path) -> heatsdf::Result<Vec<u8>> {
    let config = RunConfig::from_json(Profile::Quick, &tiny_config())?;
    let cloud = dir.join("cloud.xyz");
    let mesh = dir.join("mesh.obj");
    let shape = AnalyticShape::sphere();
    pipeline::oracle_sample_command(&shape, SampleMode::Uniform, 2000, 12, &cloud)?;
    shape.reference_mesh(64)?.write_obj(&mesh)?;
    pipeline::heat_command(&config, &cloud, &dir.join("heat.ckpt"))?;
    pipeline::sdf_command(&config, &cloud, &dir.join("heat.ckpt"), &dir.join("sdf.ckpt"))?;
    let csv = dir.join("report.csv");
    pipeline::eval_command(&dir.join("sdf.ckpt"), &mesh, &dir.join("band.bin"), &csv, Some("sphere"))?;
    Ok(std::fs::read(csv)?)
}

fn criterion_12() -> Check {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = pipeline_csv(a.path())?;
    let second = pipeline_csv(b.path())?;
    let threads = rayon::current_num_threads();
    Ok(Outcome::new(
        first == second,
        format!(
            "two runs with {threads} thread(s) wrote {} and {} CSV bytes, identical: {}",
            first.len(),
            second.len(),
            first == second
        ),
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let include_ignored = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let names: Vec<String> = (1..=12).map(|n| format!("criterion_{n}")).collect();
    if args.iter().any(|a| a == "--list") {
        for n in &names {
            println!("{n}: test");
        }
        return;
    }
    let selected = |n: usize| {
        filters.is_empty()
            || filters
                .iter()
                .any(|f| f.parse::<usize>().map_or_else(|_| names[n - 1].contains(f.as_str()), |k| k == n))
    };

    let sphere: OnceCell<heatsdf::Result<SphereRun>> = OnceCell::new();
    let shared = || match sphere.get_or_init(SphereRun::new) {
        Ok(run) => Ok(run),
        Err(e) => Err(heatsdf::Error::InvalidArgument(format!("sphere run failed: {e}"))),
    };

    let mut failed = Vec::new();
    for n in 1..=12 {
        if !selected(n) {
            continue;
        }
        if n == 8 && !include_ignored {
            println!("criterion 8: SKIPPED (full profile; run with --ignored)");
            continue;
        }
        let start = Instant::now();
        let result = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => shared().and_then(criterion_6),
            7 => shared().and_then(criterion_7),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => shared().and_then(criterion_10),
            11 => criterion_11(),
            12 => criterion_12(),
            _ => unreachable!(),
        };
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                println!("criterion {n}: {} ({}) [{secs:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.details);
                if !o.pass {
                    failed.push(n);
                }
            }
            Err(e) => {
                println!("criterion {n}: FAIL (error: {e}) [{secs:.1} s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

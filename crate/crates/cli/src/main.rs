//! `heat-sdf`: neural signed distance fields from unoriented point clouds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatsdf::config::Profile;
use heatsdf::pipeline;
use heatsdf::{AnalyticShape, CsgOp, Error, RunConfig, SampleMode};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "heat-sdf", version, about = "Neural signed distance fields via the variational heat method")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config (or a run manifest); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (also settable through RAYON_NUM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Keep input coordinates instead of rescaling them into [-1, 1]³.
    #[arg(long, global = true)]
    no_normalize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Quick,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Union,
    Intersection,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Uniform,
    Nonuniform,
    Noisy,
    Sparse,
}

#[derive(Subcommand)]
enum Command {
    /// Train the two heat time steps.
    Heat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        tau_hat: Option<f64>,
    },
    /// Fit the signed distance field to a trained heat stage.
    Sdf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        heat: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda_fit: Option<f64>,
        #[arg(long)]
        lambda_b: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Orientation grid cell size; must divide 2.4.
        #[arg(long)]
        grid_h: Option<f64>,
    },
    /// Compute error measures against a ground-truth mesh.
    Eval {
        #[arg(long)]
        sdf: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Band file; generated from the mesh when missing.
        #[arg(long)]
        band: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Extract the zero level set as OBJ.
    Extract {
        #[arg(long)]
        sdf: PathBuf,
        #[arg(long, default_value_t = 256)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boolean combination of two models, extracted as OBJ.
    Csg {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum)]
        op: OpArg,
        #[arg(long, default_value_t = 256)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heat flow on the level sets of a model, starting from a ball.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sdf: PathBuf,
        /// Ball center and radius: cx,cy,cz,r
        #[arg(long, allow_hyphen_values = true, value_name = "CX,CY,CZ,R")]
        ball: String,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value = "w_")]
        out_prefix: String,
    },
    /// Ground-truth tools.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Run the pipeline once per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config entry: lambda_fit, lambda_b, delta, tau, tau_hat, seed, or a dotted path.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        band: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Sample a point cloud from an analytic shape.
    Sample {
        #[arg(long)]
        shape: String,
        #[arg(long, value_enum, default_value = "uniform")]
        mode: ModeArg,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the reference mesh of the shape.
        #[arg(long)]
        mesh_out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        mesh_res: usize,
    },
    /// Backward-Euler heat step on a regular grid.
    Heat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 48)]
        dims: usize,
        #[arg(long, default_value_t = heatsdf::heat::DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common, edit: impl FnOnce(&mut RunConfig) -> heatsdf::Result<()>) -> heatsdf::Result<RunConfig> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let profile = match common.profile {
        Some(ProfileArg::Quick) => Profile::Quick,
        Some(ProfileArg::Full) | None => Profile::Full,
    };
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path, profile)?,
        None => RunConfig::for_profile(profile),
    };
    if common.profile.is_some() && common.config.is_some() && config.profile != profile {
        log::warn!("--profile ignored: the config file names its own profile");
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.no_normalize {
        config.normalize = false;
    }
    edit(&mut config)?;
    config.validate()?;
    Ok(config)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> heatsdf::Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("missing required --{flag}")))
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string()))
}

fn run(cli: Cli) -> heatsdf::Result<()> {
    match cli.command {
        Command::Heat {
            common,
            cloud,
            out,
            tau,
            tau_hat,
        } => {
            let config = resolve(&common, |c| {
                c.heat.tau = tau.unwrap_or(c.heat.tau);
                c.heat.tau_hat = tau_hat.unwrap_or(c.heat.tau_hat);
                Ok(())
            })?;
            let heat = pipeline::heat_command(&config, required(&cloud, "cloud")?, required(&out, "out")?)?;
            println!("heat stage done, κ = {:.6}", heat.kappa);
        }
        Command::Sdf {
            common,
            cloud,
            heat,
            out,
            lambda_fit,
            lambda_b,
            delta,
            grid_h,
        } => {
            let config = resolve(&common, |c| {
                c.sdf.lambda_fit = lambda_fit.unwrap_or(c.sdf.lambda_fit);
                c.sdf.lambda_b = lambda_b.unwrap_or(c.sdf.lambda_b);
                c.sdf.delta = delta.unwrap_or(c.sdf.delta);
                if let Some(h) = grid_h {
                    c.set_grid_h(h)?;
                }
                Ok(())
            })?;
            let outcome = pipeline::sdf_command(
                &config,
                required(&cloud, "cloud")?,
                required(&heat, "heat")?,
                required(&out, "out")?,
            )?;
            let r = &outcome.report;
            println!(
                "sdf stage done: misclassified cells {} inside / {} outside",
                r.misclassified_inside, r.misclassified_outside
            );
        }
        Command::Eval {
            sdf,
            mesh,
            band,
            out,
            name,
        } => {
            let report = pipeline::eval_command(&sdf, &mesh, &band, &out, name.as_deref())?;
            println!("{}\n{}", heatsdf::metrics::CSV_HEADER, report.csv_row());
        }
        Command::Extract { sdf, res, out } => {
            let mesh = pipeline::extract_command(&sdf, res, &out)?;
            println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
        }
        Command::Csg { a, b, op, res, out } => {
            let op = match op {
                OpArg::Union => CsgOp::Union,
                OpArg::Intersection => CsgOp::Intersection,
            };
            let mesh = pipeline::csg_command(&a, &b, op, res, &out)?;
            println!("{} triangles", mesh.triangles.len());
        }
        Command::Flow {
            common,
            sdf,
            ball,
            tau,
            sigma,
            steps,
            out_prefix,
        } => {
            let config = resolve(&common, |c| {
                c.flow.tau = tau.unwrap_or(c.flow.tau);
                c.flow.sigma = sigma.unwrap_or(c.flow.sigma);
                Ok(())
            })?;
            let bad = || Error::InvalidArgument(format!("--ball takes cx,cy,cz,r, got '{ball}'"));
            let values = ball
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<f64>, Error>>()?;
            let ball: [f64; 4] = values.try_into().map_err(|_| bad())?;
            let reports = pipeline::flow_command(&config, &sdf, ball, steps, &out_prefix)?;
            for (k, r) in reports.iter().enumerate() {
                println!("step {}: energy {:.6e} -> {:.6e}", k + 1, r.energy_before, r.energy_after);
            }
        }
        Command::Oracle { command } => match command {
            OracleCommand::Sample {
                shape,
                mode,
                n,
                seed,
                out,
                mesh_out,
                mesh_res,
            } => {
                let shape: AnalyticShape = shape.parse()?;
                let mode = match mode {
                    ModeArg::Uniform => SampleMode::Uniform,
                    ModeArg::Nonuniform => SampleMode::Nonuniform,
                    ModeArg::Noisy => SampleMode::Noisy,
                    ModeArg::Sparse => SampleMode::Sparse,
                };
                let pc = pipeline::oracle_sample_command(&shape, mode, n, seed, &out)?;
                if let Some(path) = mesh_out {
                    shape.reference_mesh(mesh_res)?.write_obj(&path)?;
                }
                println!("{} points written", pc.len());
            }
            OracleCommand::Heat {
                common,
                cloud,
                dims,
                tau,
                out,
            } => {
                let config = resolve(&common, |_| Ok(()))?;
                let (_, report) = pipeline::oracle_heat_command(&config, &cloud, dims, tau, &out)?;
                println!("converged in {} CG iterations", report.iterations);
            }
        },
        Command::Sweep {
            common,
            param,
            values,
            cloud,
            mesh,
            band,
            out_dir,
        } => {
            let config = resolve(&common, |_| Ok(()))?;
            let values: Vec<Value> = values.iter().filter(|v| !v.trim().is_empty()).map(|v| parse_value(v)).collect();
            let outcome = pipeline::sweep_command(&config, &param, &values, &cloud, &mesh, &band, &out_dir)?;
            println!("{}", heatsdf::metrics::CSV_HEADER);
            for r in &outcome.reports {
                println!("{}", r.csv_row());
            }
            for (v, e) in &outcome.failures {
                eprintln!("run {param}={v} failed: {e}");
            }
        }
    }
    Ok(())
}

/// Exit status per error class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_) | Error::InvalidArgument(_) => 2,
        Error::FileNotFound(_) | Error::Io(_) => 3,
        Error::Parse { .. } | Error::CorruptBlob(_) | Error::VersionMismatch(_) | Error::Json(_) => 4,
        Error::TooFewPoints { .. }
        | Error::DegenerateCloud
        | Error::NoOutsideSeed
        | Error::EmptyLevelSet
        | Error::DegenerateNormal
        | Error::SignAmbiguous(_)
        | Error::ShapeMismatch { .. } => 5,
        Error::NonFiniteGradient { .. } | Error::NonFinite(_) | Error::RejectionStall { .. } | Error::CgNoConvergence { .. } => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Neural signed distance fields from unoriented point clouds.
//!
//! The pipeline has two convex stages. A short backward-Euler heat step is
//! solved variationally with the point cloud's (density-compensated) surface
//! measure as initial data; its normalized gradient gives unoriented
//! distance directions. A second network is then fitted to those directions,
//! oriented by an inside/outside flood fill, to obtain the signed distance.
//!
//! Everything lives in the computational box `Ω = (-1.2, 1.2)³`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod field;
pub mod heat;
pub mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod oracle;
pub mod orientation;
pub mod pipeline;
pub mod pointcloud;
pub mod sampling;
pub mod sdf;
pub mod spatial;
pub mod surface;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedField};
pub use config::{Profile, RunConfig};
pub use error::{Error, Result};
pub use field::{Architecture, FieldSample, NeuralField, SampleAdjoint, ScalarField};
pub use heat::{HeatConfig, HeatSolution};
pub use mesh::TriMesh;
pub use metrics::{BandSet, MetricsReport, ReferenceMesh};
pub use oracle::{AnalyticShape, GridField, SampleMode};
pub use orientation::{CellLabel, LabelCounts, MaskBuild, RegionMask};
pub use pointcloud::{NormalizationTransform, PointCloud};
pub use sdf::{SdfConfig, SdfModel};
pub use surface::{CsgOp, FlowConfig, LevelSetState};
pub use train::{AdamState, FitConfig, TrainSchedule, TrainTrace};

/// 3D vector / point type used throughout.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Half edge length of the computational box `Ω = (-H, H)³`.
pub const DOMAIN_HALF_EXTENT: f64 = 1.2;

/// `|Ω| = 2.4³`.
pub const DOMAIN_VOLUME: f64 = 2.4 * 2.4 * 2.4;

/// True when `p` lies strictly inside `Ω`.
pub fn in_domain(p: &Vec3) -> bool {
    p.iter().all(|c| c.abs() < DOMAIN_HALF_EXTENT)
}

//! Reflected diffusions in convex polyhedral cones with oblique reflection.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod density;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod leveling;
pub mod lp;
pub mod rng;
pub mod simulate;
pub mod skorokhod;
pub mod stats;

pub use error::{ConfigError, ConfigErrorKind, Error, Result};
pub use geometry::PolyhedralCone;
pub use simulate::{DiffusionModel, Dispersion, Domain, Drift, ModelBounds, SimPath};
pub use skorokhod::{PiecewisePath, ReflectedPath, ReflectionMatrix};
pub use harness::{parse_config, run, ExperimentConfig, RunManifest};
pub use leveling::{ExitSample, GapCurve};
pub use stats::Verdict;

//! Config-driven experiment runner.
//!
//! [`parse_config`] turns a config file into an [`ExperimentConfig`] and
//! [`run`] dispatches it to the owning module. Every output file goes
//! through one sink that records its SHA-256 digest in the [`RunManifest`].
//! Random streams descend from the config seed only, so identical configs
//! reproduce every CSV and JSON file byte for byte at any thread count.

mod config;
mod run;

pub use config::{
    parse_config, parse_config_with, ConeSpec, DispersionSpec, DriftSpec, ExperimentConfig, ExperimentKind,
    FlowParams, Functional, KindParams, LevelingParams, ModelSpec, PathSource, PsiGapParams, ScalingParams,
    SimulateParams, SpSolveParams, DEFAULT_DT, DEFAULT_EPSILONS, DEFAULT_REPLICAS,
};
pub use run::{run, FileRecord, RunManifest, RunOptions, RunOutcome, RunStatus, StageTiming, MANIFEST_NAME};

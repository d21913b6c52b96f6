//! Scenario studies over the charging game: configuration, data ingestion,
//! study orchestration and plot-data emission.
//!
//! Everything a study emits is plain CSV (plus JSON for schedules) prefixed
//! with `# key=value` metadata lines carrying the config hash, the seed and
//! the tool version; identical configurations reproduce identical files.
//! Rendering is left to external tooling.

pub mod config;
pub mod output;
pub mod studies;
pub mod synth;

pub use config::{load_config, validate_config, LoadedConfig, RunConfig, StudyKind};
pub use studies::StudyContext;

/// Version string stamped into output metadata.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment-variable prefix for configuration overrides. A variable
/// `V2G_STUDIES_STUDY__SEED=7` overrides the JSON path `study.seed`
/// (`__` separates path segments; names are matched case-insensitively).
pub const ENV_PREFIX: &str = "V2G_STUDIES_";

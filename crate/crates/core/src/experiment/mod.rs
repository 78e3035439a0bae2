//! Run orchestration: configs, the generation loop with checkpoints, exports
//! and multi-seed comparison suites.

pub mod bench;
pub mod config;
pub mod export;
pub mod run;

pub use bench::{run_suite, Recovery, SuiteConfig, SuiteOutput};
pub use config::{Algorithm, ResolvedRun, RunConfig, PRESETS};
pub use export::{export, ExportKind};
pub use run::{default_run_dir, read_curves, run, RunMeta, RunOutput};

//! Experiment runner: run stores, evaluation reports, significance tests and
//! ablations on top of `gier-core`.

pub mod ablate;
pub mod config;
pub mod evaluate;
pub mod record;
pub mod run;
pub mod significance;
pub mod stages;
pub mod store;

pub use ablate::cmd_ablate;
pub use config::{Ablation, ExperimentConfig, Overrides};
pub use evaluate::cmd_evaluate;
pub use record::{cmd_record, cmd_validate};
pub use run::{cmd_run, RunSummary};
pub use significance::cmd_significance;
pub use store::RunStore;

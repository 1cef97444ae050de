//! Experiment harness: configs, seeded runs with hashed artifacts, lemma
//! audits and regret plots.

pub mod audit;
pub mod config;
pub mod instance;
pub mod plot;
pub mod run;

pub use audit::{cmd_audit, AuditOutcome, MarginSource};
pub use config::{AgentConfig, AuditConfig, EnvConfig, ExperimentConfig};
pub use instance::{cmd_gen, cmd_validate};
pub use plot::cmd_plot;
pub use run::{cmd_run, Manifest};

//! Experiment harness: variants, epoch accounting, replicated runs, exports
//! and the TOML experiment description.

mod config;
mod experiment;
mod export;
mod runs;
mod variant;

pub use config::*;
pub use experiment::*;
pub use export::*;
pub use runs::*;
pub use variant::*;

//! Command-line orchestration for sceno: run manifests, the resumable
//! evaluation log and the `learn`, `verify`, `explore`, `simulate` and
//! `render` commands.
//!
//! Exit codes: 0 success (or SAFE), 2 UNSAFE, 3 UNKNOWN, 1 any error.

pub mod cache;
pub mod commands;
pub mod error;
pub mod manifest;

pub use commands::{execute, run, Outcome};
pub use error::{CliError, Result};
pub use manifest::{CommandSpec, RunManifest};

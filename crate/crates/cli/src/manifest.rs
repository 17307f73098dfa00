//! Run manifests: what was run, with which seed, where the outputs went.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Subcommand and its resolved arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum CommandSpec {
    Learn {
        #[serde(default)]
        sequential: bool,
    },
    Verify {
        model: PathBuf,
        cert: PathBuf,
        tau: f64,
        tol: f64,
        budget: usize,
    },
    Explore {
        model: PathBuf,
        dims: [usize; 2],
        grid: usize,
        tau: f64,
        tol: f64,
        budget: usize,
        #[serde(default)]
        sequential: bool,
    },
    Simulate {
        scenario: String,
        theta: Vec<f64>,
    },
    Render {
        heatmap: PathBuf,
        svg: PathBuf,
        #[serde(default)]
        title: Option<String>,
    },
}

impl CommandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CommandSpec::Learn { .. } => "learn",
            CommandSpec::Verify { .. } => "verify",
            CommandSpec::Explore { .. } => "explore",
            CommandSpec::Simulate { .. } => "simulate",
            CommandSpec::Render { .. } => "render",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub command: CommandSpec,
    /// Scenario configuration file, when the command reads one.
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tool_version: String,
    /// Unix seconds.
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub exit_code: Option<i32>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: CommandSpec, config: Option<PathBuf>, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            command,
            config,
            seed,
            output_dir: output_dir.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: None,
            finished_at: None,
            exit_code: None,
        }
    }

    pub fn path(&self) -> PathBuf {
        self.output_dir
            .join(format!("manifest-{}.json", self.command.name()))
    }

    /// Create the output directory if needed and write the manifest there.
    pub fn write(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| CliError::io(&self.output_dir, e))?;
        let path = self.path();
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Json {
            path: path.clone(),
            source: e,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

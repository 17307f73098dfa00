use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sceno_core::scenario::{ScenarioConfig, VerifySettings};
use sceno_core::ExploreConfig;
use sceno_cli::commands::{parent_dir, SCENARIO_FILE};
use sceno_cli::{execute, CliError, CommandSpec, Result, RunManifest};

/// Surrogate-based safety verification of parameterized driving scenarios.
///
/// Every option can also be set through an environment variable named
/// SCENO_<OPTION>, e.g. SCENO_SEED or SCENO_TAU.
#[derive(Debug, Parser)]
#[command(name = "sceno", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Learn a surrogate and its error certificate from a scenario file.
    Learn {
        #[arg(long, env = "SCENO_CONFIG")]
        config: PathBuf,
        /// Defaults to the seed in the scenario file.
        #[arg(long, env = "SCENO_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "SCENO_OUT")]
        out: PathBuf,
        /// Evaluate samples one at a time.
        #[arg(long, env = "SCENO_SEQUENTIAL")]
        sequential: bool,
    },
    /// Check f - lambda* >= tau over the whole parameter space.
    Verify {
        #[arg(long, env = "SCENO_MODEL")]
        model: PathBuf,
        #[arg(long, env = "SCENO_CERT")]
        cert: PathBuf,
        #[arg(long, env = "SCENO_TAU", allow_hyphen_values = true)]
        tau: f64,
        #[arg(long, env = "SCENO_TOL")]
        tol: Option<f64>,
        #[arg(long, env = "SCENO_BUDGET")]
        budget: Option<usize>,
        #[arg(long, env = "SCENO_SEED", default_value_t = 0)]
        seed: u64,
        /// Defaults to the model's directory.
        #[arg(long, env = "SCENO_OUT")]
        out: Option<PathBuf>,
    },
    /// Certified unsafe indicators over a grid of two parameters.
    Explore {
        #[arg(long, env = "SCENO_MODEL")]
        model: PathBuf,
        /// Two parameter indices or names, e.g. `2,3` or `init_gap,trigger_gap`.
        #[arg(long, env = "SCENO_DIMS")]
        dims: String,
        #[arg(long, env = "SCENO_GRID")]
        grid: usize,
        #[arg(long, env = "SCENO_TAU", allow_hyphen_values = true)]
        tau: f64,
        #[arg(long, env = "SCENO_TOL")]
        tol: Option<f64>,
        #[arg(long, env = "SCENO_BUDGET")]
        budget: Option<usize>,
        #[arg(long, env = "SCENO_SEED", default_value_t = 0)]
        seed: u64,
        /// Scenario file used to resolve parameter names; defaults to the
        /// scenario.json next to the model.
        #[arg(long, env = "SCENO_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "SCENO_OUT")]
        out: Option<PathBuf>,
        #[arg(long, env = "SCENO_SEQUENTIAL")]
        sequential: bool,
    },
    /// Run one simulation and print its fitness.
    ///
    /// With a builtin scenario id, `theta` lists the five physical scenario
    /// parameters; with a scenario file it is a normalized parameter vector.
    Simulate {
        #[arg(long, env = "SCENO_SCENARIO")]
        scenario: String,
        #[arg(long, env = "SCENO_THETA", allow_hyphen_values = true)]
        theta: String,
        #[arg(long, env = "SCENO_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Render a heatmap CSV as SVG.
    Render {
        #[arg(long, env = "SCENO_HEATMAP")]
        heatmap: PathBuf,
        #[arg(long, env = "SCENO_OUT")]
        out: PathBuf,
        #[arg(long, env = "SCENO_TITLE")]
        title: Option<String>,
    },
    /// Run a command again from a manifest it wrote.
    Replay {
        manifest: PathBuf,
    },
}

fn parse_csv(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad number `{}` in `{text}`: {e}", s.trim())))
        })
        .collect()
}

fn resolve_dims(dims: &str, config: Option<&Path>) -> Result<[usize; 2]> {
    let parts: Vec<&str> = dims.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!("--dims needs exactly two entries, got `{dims}`")));
    }
    let mut out = [0; 2];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = match part.parse::<usize>() {
            Ok(i) => i,
            Err(_) => {
                let path = config.ok_or_else(|| {
                    CliError::Usage(format!("parameter name `{part}` needs a scenario file (--config)"))
                })?;
                let cfg = ScenarioConfig::load(path)?;
                cfg.parameters.index_of(part).ok_or_else(|| {
                    CliError::Usage(format!("no parameter named `{part}` in {}", path.display()))
                })?
            }
        };
    }
    Ok(out)
}

fn manifest(cmd: Cmd) -> Result<RunManifest> {
    Ok(match cmd {
        Cmd::Learn {
            config,
            seed,
            out,
            sequential,
        } => {
            // The seed is fixed here, before anything is sampled.
            let seed = match seed {
                Some(s) => s,
                None => ScenarioConfig::load(&config)?.learn.seed,
            };
            RunManifest::new(CommandSpec::Learn { sequential }, Some(config), seed, out)
        }
        Cmd::Verify {
            model,
            cert,
            tau,
            tol,
            budget,
            seed,
            out,
        } => {
            let d = VerifySettings::default();
            let out = out.unwrap_or_else(|| parent_dir(&model));
            RunManifest::new(
                CommandSpec::Verify {
                    model,
                    cert,
                    tau,
                    tol: tol.unwrap_or(d.tol),
                    budget: budget.unwrap_or(d.budget),
                },
                None,
                seed,
                out,
            )
        }
        Cmd::Explore {
            model,
            dims,
            grid,
            tau,
            tol,
            budget,
            seed,
            config,
            out,
            sequential,
        } => {
            let config = config.or_else(|| {
                let p = parent_dir(&model).join(SCENARIO_FILE);
                p.is_file().then_some(p)
            });
            let dims = resolve_dims(&dims, config.as_deref())?;
            let d = ExploreConfig::default();
            let out = out.unwrap_or_else(|| parent_dir(&model));
            RunManifest::new(
                CommandSpec::Explore {
                    model,
                    dims,
                    grid,
                    tau,
                    tol: tol.unwrap_or(d.tol),
                    budget: budget.unwrap_or(d.budget),
                    sequential,
                },
                config,
                seed,
                out,
            )
        }
        Cmd::Simulate { scenario, theta, out } => RunManifest::new(
            CommandSpec::Simulate {
                scenario,
                theta: parse_csv(&theta)?,
            },
            None,
            0,
            out,
        ),
        Cmd::Render { heatmap, out, title } => {
            let dir = parent_dir(&out);
            RunManifest::new(
                CommandSpec::Render {
                    heatmap,
                    svg: out,
                    title,
                },
                None,
                0,
                dir,
            )
        }
        Cmd::Replay { manifest } => RunManifest::load(&manifest)?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = manifest(cli.command).and_then(execute);
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {}", e.detailed());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Subcommand implementations. Each reads its inputs from a [`RunManifest`]
//! and writes its artifacts into the manifest's output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sceno_core::explore::{read_cells, render_svg};
use sceno_core::learn::learn_surrogate;
use sceno_core::pac::{certify_with_certificate, CertificateFile, ScenarioReport};
use sceno_core::scenario::{fitness_of_trace, BlackBoxConfig, ScenarioConfig};
use sceno_core::testbed::{BuiltinConfig, BuiltinScenario};
use sceno_core::{explore, safe_region, BabConfig, Exec, ExploreConfig, GridSpec, Mlp, ParamVector, Status};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cache::CachedBlackBox;
use crate::error::{CliError, Result};
use crate::manifest::{unix_now, CommandSpec, RunManifest};

pub const MODEL_FILE: &str = "model.json";
pub const CERT_FILE: &str = "certificate.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const HISTORY_FILE: &str = "history.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const EVAL_LOG_FILE: &str = "evaluations.jsonl";
pub const REPORT_FILE: &str = "verify-report.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SIMULATION_FILE: &str = "simulation.json";

/// Exit code and the text to print on stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: String,
}

impl Outcome {
    fn ok(message: String) -> Self {
        Self {
            exit_code: 0,
            message,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn pretty<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Json {
            path: path.to_path_buf(),
            source: e,
        })
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ScenarioConfig::from_json(&text).map_err(|e| match e {
        sceno_core::Error::Json(source) => CliError::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn load_model(path: &Path) -> Result<Mlp> {
    if !path.exists() {
        return Err(CliError::Usage(format!("model file {} does not exist", path.display())));
    }
    Ok(Mlp::load(path)?)
}

/// Write the manifest, run the command, then record how it ended.
pub fn execute(mut manifest: RunManifest) -> Result<Outcome> {
    manifest.started_at = Some(unix_now());
    manifest.finished_at = None;
    manifest.exit_code = None;
    manifest.write()?;
    let result = run(&manifest);
    manifest.finished_at = Some(unix_now());
    manifest.exit_code = Some(match &result {
        Ok(o) => o.exit_code,
        Err(e) => e.exit_code(),
    });
    manifest.write()?;
    result
}

/// Run the command of `manifest` without touching the manifest file.
pub fn run(manifest: &RunManifest) -> Result<Outcome> {
    match &manifest.command {
        CommandSpec::Learn { .. } => run_learn(manifest),
        CommandSpec::Verify { .. } => run_verify(manifest),
        CommandSpec::Explore { .. } => run_explore(manifest),
        CommandSpec::Simulate { .. } => run_simulate(manifest),
        CommandSpec::Render { .. } => run_render(manifest),
    }
}

/// Digest of everything that determines the black box's answers.
fn scenario_context(cfg: &ScenarioConfig) -> String {
    let blackbox = match &cfg.blackbox {
        BlackBoxConfig::Builtin(b) => BlackBoxConfig::Builtin(b.resolved(&cfg.parameters)),
        other => other.clone(),
    };
    let text = serde_json::to_string(&(&cfg.parameters, &blackbox)).expect("config serializes");
    hex_digest(text.as_bytes())
}

fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_learn(manifest: &RunManifest) -> Result<Outcome> {
    let CommandSpec::Learn { sequential } = manifest.command else {
        return Err(CliError::Usage("not a learn manifest".into()));
    };
    let config_path = manifest
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("learn needs a scenario configuration".into()))?;
    let mut cfg = load_config(config_path)?;
    if let BlackBoxConfig::Builtin(b) = &cfg.blackbox {
        cfg.blackbox = BlackBoxConfig::Builtin(b.resolved(&cfg.parameters));
    }
    let out = &manifest.output_dir;
    let mut learn_cfg = cfg.learn.clone();
    learn_cfg.seed = manifest.seed;
    learn_cfg.exec = if sequential { Exec::Sequential } else { Exec::default() };
    learn_cfg.validate()?;

    let log_path = out.join(EVAL_LOG_FILE);
    let bb = CachedBlackBox::open(cfg.build_blackbox()?, &log_path, scenario_context(&cfg))?;
    let outcome = match learn_surrogate(&bb, &cfg.parameters, &learn_cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!(
                "learning stopped; completed evaluations are kept in {} and reused by the next run",
                log_path.display()
            );
            return Err(e.into());
        }
    };

    let scenario_path = out.join(SCENARIO_FILE);
    write_file(&scenario_path, cfg.to_json_pretty()? + "\n")?;
    let model_path = out.join(MODEL_FILE);
    write_file(&model_path, outcome.model.to_json()? + "\n")?;
    let cert_file = CertificateFile::new(outcome.certificate.clone(), cfg.name.clone(), &outcome.model)?;
    write_file(&out.join(CERT_FILE), cert_file.to_json_pretty()? + "\n")?;
    write_file(&out.join(DATASET_FILE), outcome.dataset.to_json()? + "\n")?;
    let history_path = out.join(HISTORY_FILE);
    write_file(&history_path, pretty(&outcome.history, &history_path)?)?;

    let c = &outcome.certificate;
    let mut msg = String::new();
    let _ = writeln!(msg, "scenario: {}", cfg.name);
    for r in &outcome.history {
        let _ = writeln!(
            msg,
            "iteration {}: {} training samples, loss {:.3e}, lambda* = {:.6}",
            r.iteration, r.train_size, r.train_loss, r.lambda_star
        );
    }
    let _ = writeln!(
        msg,
        "lambda* = {:.6}  epsilon = {}  eta = {}  K = {}",
        c.lambda_star, c.epsilon, c.eta, c.k
    );
    let _ = writeln!(
        msg,
        "evaluations reused from {}: {}",
        EVAL_LOG_FILE,
        bb.hits()
    );
    let _ = write!(msg, "artifacts written to {}", out.display());
    Ok(Outcome::ok(msg))
}

pub fn run_verify(manifest: &RunManifest) -> Result<Outcome> {
    let CommandSpec::Verify {
        model,
        cert,
        tau,
        tol,
        budget,
    } = &manifest.command
    else {
        return Err(CliError::Usage("not a verify manifest".into()));
    };
    let f = load_model(model)?;
    let cert_file = CertificateFile::load(cert)?;
    cert_file.check_model(&f)?;
    let bab = BabConfig {
        seed: manifest.seed,
        ..BabConfig::with_limits(*tol, *budget)
    };
    let result = certify_with_certificate(&f, &cert_file.certificate, *tau, &bab);
    let report = ScenarioReport::new(result, &cert_file.certificate, *tau);
    let report_path = manifest.output_dir.join(REPORT_FILE);
    write_file(&report_path, pretty(&report, &report_path)?)?;

    let r = &report.result;
    let mut msg = format!(
        "{}: certified lower bound of f over the space is {:.6}, threshold tau + lambda* = {:.6}",
        r.status, r.certified_lower, r.threshold
    );
    if let (Some(theta), Some(v), Some(vl)) = (
        &r.counterexample,
        r.counterexample_value,
        report.counterexample_value_minus_lambda,
    ) {
        let _ = write!(msg, "\ncounterexample theta = {:?}\nf(theta) = {v:.6}, f(theta) - lambda* = {vl:.6}", &theta[..]);
    }
    if r.status == Status::Unknown {
        let _ = write!(msg, "\nsearch budget of {} nodes exhausted", r.budget);
    }
    let _ = write!(msg, "\nreport written to {}", report_path.display());
    Ok(Outcome {
        exit_code: r.status.exit_code(),
        message: msg,
    })
}

pub fn run_explore(manifest: &RunManifest) -> Result<Outcome> {
    let CommandSpec::Explore {
        model,
        dims,
        grid,
        tau,
        tol,
        budget,
        sequential,
    } = &manifest.command
    else {
        return Err(CliError::Usage("not an explore manifest".into()));
    };
    let f = load_model(model)?;
    let spec = GridSpec::new(dims[0], dims[1], *grid, f.input_dim())?;
    let cfg = ExploreConfig {
        tol: *tol,
        budget: *budget,
        seed: manifest.seed,
        exec: if *sequential { Exec::Sequential } else { Exec::default() },
    };
    let h = explore(&f, &spec, *tau, &cfg)?;
    let path = manifest.output_dir.join(HEATMAP_FILE);
    write_file(&path, h.to_csv_string()?)?;
    let safe = safe_region(&h).len();
    let flagged = h.flags.iter().flatten().filter(|&&b| b).count();
    let max = h.rho_indicator.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    Ok(Outcome::ok(format!(
        "{} of {} cells certified safe (indicator 0), largest indicator {:.6}, {} cells hit the search budget\nheatmap written to {}",
        safe,
        grid * grid,
        max,
        flagged,
        path.display()
    )))
}

#[derive(Debug, Serialize)]
struct SimulationRecord {
    scenario: String,
    theta: Option<Vec<f64>>,
    parameters: BTreeMap<String, f64>,
    rho: f64,
    steps: Option<usize>,
}

pub fn run_simulate(manifest: &RunManifest) -> Result<Outcome> {
    let CommandSpec::Simulate { scenario, theta } = &manifest.command else {
        return Err(CliError::Usage("not a simulate manifest".into()));
    };
    let record = if Path::new(scenario).is_file() {
        let cfg = load_config(Path::new(scenario))?;
        let t = ParamVector::new(theta.clone())?;
        let physical = cfg.parameters.denormalize(&t)?;
        let parameters = cfg
            .parameters
            .params()
            .iter()
            .map(|p| p.name.clone())
            .zip(physical)
            .collect();
        let (rho, steps) = match &cfg.blackbox {
            BlackBoxConfig::Builtin(b) => {
                let bb = sceno_core::testbed::builtin_blackbox_with(b, &cfg.parameters)?;
                let trace = bb.trace(&t)?;
                (fitness_of_trace(&trace)?, Some(trace.len()))
            }
            BlackBoxConfig::Subprocess(_) => {
                let bb = cfg.build_blackbox()?;
                let rho = bb.evaluate(&t).map_err(|source| sceno_core::Error::Eval {
                    theta: t.to_vec(),
                    source,
                })?;
                (rho, None)
            }
        };
        SimulationRecord {
            scenario: cfg.name.clone(),
            theta: Some(t.to_vec()),
            parameters,
            rho,
            steps,
        }
    } else {
        let id = BuiltinScenario::parse(scenario).map_err(|_| {
            CliError::Usage(format!(
                "`{scenario}` is neither a scenario file nor a builtin scenario (braking, crossing)"
            ))
        })?;
        let cfg = BuiltinConfig::new(id);
        let trace = cfg.trace_physical(theta)?;
        SimulationRecord {
            scenario: id.id().to_string(),
            theta: None,
            parameters: id
                .param_names()
                .iter()
                .map(|n| n.to_string())
                .zip(theta.iter().copied())
                .collect(),
            rho: fitness_of_trace(&trace)?,
            steps: Some(trace.len()),
        }
    };
    let path = manifest.output_dir.join(SIMULATION_FILE);
    let text = pretty(&record, &path)?;
    write_file(&path, &text)?;
    Ok(Outcome::ok(format!("rho = {:.6}\n{}", record.rho, text.trim_end())))
}

pub fn run_render(manifest: &RunManifest) -> Result<Outcome> {
    let CommandSpec::Render { heatmap, svg, title } = &manifest.command else {
        return Err(CliError::Usage("not a render manifest".into()));
    };
    let file = std::fs::File::open(heatmap).map_err(|e| CliError::io(heatmap, e))?;
    let rows = read_cells(file)?;
    let title = title.clone().unwrap_or_else(|| {
        heatmap
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "heatmap".into())
    });
    write_file(svg, render_svg(&rows, &title)?)?;
    Ok(Outcome::ok(format!("wrote {}", svg.display())))
}

/// Directory holding `path`, or `.` for a bare file name.
pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

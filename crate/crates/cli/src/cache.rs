//! Persistent evaluation log so interrupted learning runs can resume.
//!
//! Every successful evaluation is appended to a JSON-lines file as soon as
//! its batch completes. Entries are keyed by the sample digest of `theta`
//! and tagged with a digest of the scenario definition, so a log written for
//! another scenario or simulator is ignored.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sceno_core::error::EvalError;
use sceno_core::pac::sample_digest;
use sceno_core::{BlackBox, Exec, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    context: String,
    key: String,
    theta: Vec<f64>,
    rho: f64,
}

fn key_of(theta: &ParamVector) -> String {
    sample_digest(std::slice::from_ref(theta))
}

pub struct CachedBlackBox {
    inner: Box<dyn BlackBox>,
    context: String,
    path: PathBuf,
    known: Mutex<HashMap<String, f64>>,
    log: Mutex<File>,
    hits: AtomicUsize,
    loaded: usize,
}

impl CachedBlackBox {
    /// Wrap `inner`, reusing entries of `path` recorded under `context`.
    pub fn open(inner: Box<dyn BlackBox>, path: &Path, context: impl Into<String>) -> Result<Self> {
        let context = context.into();
        let mut known = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| CliError::io(path, e))?;
                // A torn last line from an interrupted run is simply skipped.
                let Ok(e) = serde_json::from_str::<Entry>(&line) else {
                    continue;
                };
                let Ok(theta) = ParamVector::new(e.theta) else {
                    continue;
                };
                if e.context == context && e.rho.is_finite() && key_of(&theta) == e.key {
                    known.insert(e.key, e.rho);
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            inner,
            context,
            path: path.to_path_buf(),
            loaded: known.len(),
            known: Mutex::new(known),
            log: Mutex::new(log),
            hits: AtomicUsize::new(0),
        })
    }

    /// Entries usable for this context when the cache was opened.
    pub fn loaded(&self) -> usize {
        self.loaded
    }

    /// Evaluations answered from the log so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn record(&self, fresh: &[(&ParamVector, f64)]) {
        if fresh.is_empty() {
            return;
        }
        let mut text = String::new();
        let mut known = self.known.lock().unwrap_or_else(|p| p.into_inner());
        for (theta, rho) in fresh {
            let key = key_of(theta);
            let e = Entry {
                context: self.context.clone(),
                key: key.clone(),
                theta: theta.to_vec(),
                rho: *rho,
            };
            text.push_str(&serde_json::to_string(&e).expect("entry serializes"));
            text.push('\n');
            known.insert(key, *rho);
        }
        drop(known);
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        // Losing the log only costs resumability, never correctness.
        let _ = log.write_all(text.as_bytes()).and_then(|_| log.flush());
    }
}

impl BlackBox for CachedBlackBox {
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError> {
        self.evaluate_batch(std::slice::from_ref(theta), Exec::Sequential)
            .pop()
            .expect("one result")
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn evaluate_batch(&self, thetas: &[ParamVector], exec: Exec) -> Vec<std::result::Result<f64, EvalError>> {
        let mut out: Vec<Option<std::result::Result<f64, EvalError>>> = vec![None; thetas.len()];
        let mut missing = Vec::new();
        {
            let known = self.known.lock().unwrap_or_else(|p| p.into_inner());
            for (i, t) in thetas.iter().enumerate() {
                match known.get(&key_of(t)) {
                    Some(&rho) => out[i] = Some(Ok(rho)),
                    None => missing.push(i),
                }
            }
        }
        self.hits.fetch_add(thetas.len() - missing.len(), Ordering::Relaxed);
        if !missing.is_empty() {
            let batch: Vec<ParamVector> = missing.iter().map(|&i| thetas[i].clone()).collect();
            let results = self.inner.evaluate_batch(&batch, exec);
            let fresh: Vec<(&ParamVector, f64)> = batch
                .iter()
                .zip(&results)
                .filter_map(|(t, r)| match r {
                    Ok(rho) if rho.is_finite() => Some((t, *rho)),
                    _ => None,
                })
                .collect();
            self.record(&fresh);
            for (i, r) in missing.into_iter().zip(results) {
                out[i] = Some(r);
            }
        }
        out.into_iter().map(|r| r.expect("filled")).collect()
    }
}

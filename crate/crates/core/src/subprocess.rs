//! External simulators speaking newline-delimited JSON over stdin/stdout.
//!
//! Each request is one line `{"id": n, "theta": [...]}` (plus `"physical"`
//! when the parameter space is known); each response is one line
//! `{"id": n, "rho": x}` or `{"id": n, "error": "msg"}`. Responses may arrive
//! in any order and are matched by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::par::Exec;
use crate::scenario::{BlackBox, ParamSpace, ParamVector};

fn default_concurrency() -> usize {
    1
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubprocessConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    /// Number of child processes; only raise it for simulators that tolerate
    /// several instances.
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Seconds to wait for each response.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

impl SubprocessConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            max_concurrency: default_concurrency(),
            timeout: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(Error::Config("subprocess command is empty".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::Config(format!("timeout must be positive, got {}", self.timeout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok(id: u64, rho: f64) -> Self {
        Self {
            id,
            rho: Some(rho),
            error: None,
        }
    }

    pub fn err(id: u64, msg: impl Into<String>) -> Self {
        Self {
            id,
            rho: None,
            error: Some(msg.into()),
        }
    }

    /// Parse one line; exactly one of `rho` and `error` must be present.
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let r: Response = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match (&r.rho, &r.error) {
            (Some(_), None) | (None, Some(_)) => Ok(r),
            _ => Err("response needs exactly one of `rho` and `error`".into()),
        }
    }
}

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    next_id: u64,
}

impl Worker {
    fn spawn(cfg: &SubprocessConfig) -> Result<Self> {
        let mut child = Command::new(&cfg.command[0])
            .args(&cfg.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot start `{}`: {e}", cfg.command[0])))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            next_id: 0,
        })
    }

    /// Evaluate `items` (position, request payload); returns results by
    /// position and whether the worker is still usable.
    fn run(
        &mut self,
        items: Vec<(usize, Request)>,
        timeout: Duration,
    ) -> (Vec<(usize, std::result::Result<f64, EvalError>)>, bool) {
        let mut pending: HashMap<u64, usize> = HashMap::with_capacity(items.len());
        let mut out = Vec::with_capacity(items.len());
        let mut payload = String::new();
        for (pos, mut req) in items {
            req.id = self.next_id;
            self.next_id += 1;
            pending.insert(req.id, pos);
            payload.push_str(&serde_json::to_string(&req).expect("request serializes"));
            payload.push('\n');
        }
        let written = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(payload.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = written {
            let msg = format!("cannot send request to simulator: {e}{}", self.exit_note());
            return (fail_all(pending, &EvalError::new(msg)), false);
        }
        while !pending.is_empty() {
            match self.lines.recv_timeout(timeout) {
                Ok(line) => match Response::parse(&line) {
                    Ok(resp) => match pending.remove(&resp.id) {
                        Some(pos) => {
                            let r = match (resp.rho, resp.error) {
                                (Some(rho), _) => Ok(rho),
                                (None, Some(msg)) => Err(EvalError::with_raw(
                                    format!("simulator error: {msg}"),
                                    line.clone(),
                                )),
                                (None, None) => unreachable!("checked by parse"),
                            };
                            out.push((pos, r));
                        }
                        None => {
                            let e = EvalError::with_raw(format!("unexpected response id {}", resp.id), line);
                            out.extend(fail_all(pending, &e));
                            return (out, false);
                        }
                    },
                    Err(why) => {
                        let e = EvalError::with_raw(format!("malformed response: {why}"), line);
                        out.extend(fail_all(pending, &e));
                        return (out, false);
                    }
                },
                Err(RecvTimeoutError::Timeout) => {
                    let e = EvalError::new(format!(
                        "no response within {:.3} s",
                        timeout.as_secs_f64()
                    ));
                    out.extend(fail_all(pending, &e));
                    return (out, false);
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let e = EvalError::new(format!("simulator closed its output{}", self.exit_note()));
                    out.extend(fail_all(pending, &e));
                    return (out, false);
                }
            }
        }
        (out, true)
    }

    fn exit_note(&mut self) -> String {
        std::thread::sleep(Duration::from_millis(10));
        match self.child.try_wait() {
            Ok(Some(status)) => format!(" ({status})"),
            _ => String::new(),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn fail_all(
    pending: HashMap<u64, usize>,
    e: &EvalError,
) -> Vec<(usize, std::result::Result<f64, EvalError>)> {
    let mut v: Vec<_> = pending.into_values().map(|pos| (pos, Err(e.clone()))).collect();
    v.sort_by_key(|(pos, _)| *pos);
    v
}

/// Black box backed by `max_concurrency` child processes. A child that
/// misbehaves (timeout, malformed output, exit) is replaced on next use.
pub struct SubprocessBlackBox {
    cfg: SubprocessConfig,
    space: Option<ParamSpace>,
    workers: Vec<Mutex<Option<Worker>>>,
    next: AtomicUsize,
}

impl SubprocessBlackBox {
    pub fn new(cfg: SubprocessConfig) -> Result<Self> {
        cfg.validate()?;
        let workers = (0..cfg.max_concurrency)
            .map(|_| Worker::spawn(&cfg).map(|w| Mutex::new(Some(w))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            space: None,
            workers,
            next: AtomicUsize::new(0),
        })
    }

    /// Also send physical parameter values with each request.
    pub fn with_space(mut self, space: ParamSpace) -> Self {
        self.space = Some(space);
        self
    }

    pub fn config(&self) -> &SubprocessConfig {
        &self.cfg
    }

    fn request(&self, theta: &ParamVector) -> Request {
        Request {
            id: 0,
            theta: theta.to_vec(),
            physical: self.space.as_ref().and_then(|s| s.denormalize(theta).ok()),
        }
    }

    fn run_on(
        &self,
        w: usize,
        items: Vec<(usize, Request)>,
    ) -> Vec<(usize, std::result::Result<f64, EvalError>)> {
        let mut slot = self.workers[w].lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            match Worker::spawn(&self.cfg) {
                Ok(fresh) => *slot = Some(fresh),
                Err(e) => {
                    let err = EvalError::new(e.to_string());
                    return items.into_iter().map(|(pos, _)| (pos, Err(err.clone()))).collect();
                }
            }
        }
        let worker = slot.as_mut().expect("spawned above");
        let (out, healthy) = worker.run(items, Duration::from_secs_f64(self.cfg.timeout));
        if !healthy {
            *slot = None;
        }
        out
    }
}

impl BlackBox for SubprocessBlackBox {
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError> {
        let w = self.next.fetch_add(1, Ordering::Relaxed) % self.workers.len();
        self.run_on(w, vec![(0, self.request(theta))])
            .pop()
            .expect("one result per request")
            .1
    }

    fn descriptor(&self) -> String {
        format!("subprocess:{}", self.cfg.command.join(" "))
    }

    /// Requests are pipelined to the children, spread round-robin over them.
    fn evaluate_batch(
        &self,
        thetas: &[ParamVector],
        _exec: Exec,
    ) -> Vec<std::result::Result<f64, EvalError>> {
        let n = self.workers.len();
        let mut chunks: Vec<Vec<(usize, Request)>> = vec![Vec::new(); n];
        for (i, t) in thetas.iter().enumerate() {
            chunks[i % n].push((i, self.request(t)));
        }
        let mut results: Vec<Option<std::result::Result<f64, EvalError>>> = vec![None; thetas.len()];
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .into_iter()
                .enumerate()
                .filter(|(_, c)| !c.is_empty())
                .map(|(w, chunk)| s.spawn(move || self.run_on(w, chunk)))
                .collect();
            for h in handles {
                for (pos, r) in h.join().expect("worker thread") {
                    results[pos] = Some(r);
                }
            }
        });
        results
            .into_iter()
            .map(|r| r.expect("every position answered"))
            .collect()
    }
}

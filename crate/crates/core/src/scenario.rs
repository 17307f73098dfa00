//! Scenario formalism: normalized parameter spaces, measure traces, safety
//! thresholds and the black-box fitness contract.

use std::collections::HashSet;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::learn::LearnConfig;
use crate::par::{self, Exec};
use crate::verifier::BabConfig;

/// One physical scenario parameter and its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub unit: String,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
            unit: unit.into(),
        }
    }
}

/// The normalized box `[0,1]^m` together with the physical range of every axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamSpace {
    params: Vec<ParamSpec>,
}

impl ParamSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidSpace("at least one parameter is required".into()));
        }
        let mut seen = HashSet::new();
        for p in &params {
            if p.name.is_empty() {
                return Err(Error::InvalidSpace("parameter names must be non-empty".into()));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate parameter `{}`", p.name)));
            }
            if !(p.lo.is_finite() && p.hi.is_finite() && p.lo < p.hi) {
                return Err(Error::InvalidSpace(format!(
                    "parameter `{}` needs finite lo < hi (got [{}, {}])",
                    p.name, p.lo, p.hi
                )));
            }
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Map a normalized vector to physical units: `lo + theta * (hi - lo)`.
    pub fn denormalize(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta.len())?;
        Ok(self
            .params
            .iter()
            .zip(theta)
            .map(|(p, &t)| p.lo + t * (p.hi - p.lo))
            .collect())
    }

    /// Inverse of [`denormalize`](Self::denormalize); physical values must lie
    /// inside their ranges.
    pub fn normalize(&self, physical: &[f64]) -> Result<ParamVector> {
        self.check_dim(physical.len())?;
        let theta = self
            .params
            .iter()
            .zip(physical)
            .map(|(p, &x)| (x - p.lo) / (p.hi - p.lo))
            .collect();
        ParamVector::new(theta)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for ParamSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let params = Vec::<ParamSpec>::deserialize(d)?;
        ParamSpace::new(params).map_err(serde::de::Error::custom)
    }
}

/// A point of the normalized parameter box.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        for (index, &value) in theta.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfUnitRange { index, value });
            }
        }
        Ok(Self(theta))
    }

    /// Clamp every component into `[0, 1]`; NaN becomes 0.
    pub fn clamped(mut theta: Vec<f64>) -> Self {
        for t in &mut theta {
            *t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        }
        Self(theta)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ParamVector::new(v).map_err(serde::de::Error::custom)
    }
}

/// Samples `omega(s_0), ..., omega(s_t_end)` of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTrace {
    values: Vec<f64>,
}

impl MeasureTrace {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the final state.
    pub fn t_end(&self) -> usize {
        self.values.len() - 1
    }

    pub fn concat(&self, other: &MeasureTrace) -> MeasureTrace {
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        MeasureTrace { values }
    }
}

/// The fitness of a simulation: the minimum of its measure trace.
pub fn fitness_of_trace(trace: &MeasureTrace) -> Result<f64> {
    let mut min = f64::INFINITY;
    for (index, &value) in trace.values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        min = min.min(value);
    }
    Ok(min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub tau: f64,
    pub measure_id: String,
}

impl SafetySpec {
    pub fn new(tau: f64, measure_id: impl Into<String>) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite, got {tau}")));
        }
        Ok(Self {
            tau,
            measure_id: measure_id.into(),
        })
    }

    pub fn is_safe(&self, rho: f64) -> bool {
        is_safe(rho, self.tau)
    }
}

/// `rho >= tau`; the boundary counts as safe.
pub fn is_safe(rho: f64, tau: f64) -> bool {
    rho >= tau
}

/// An opaque fitness function `rho(theta)`.
///
/// Implementations must be deterministic: the same `theta` always yields the
/// same value.
pub trait BlackBox: Send + Sync {
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError>;

    fn descriptor(&self) -> String;

    /// Whether `evaluate` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    /// Evaluate many points; results are in input order.
    fn evaluate_batch(
        &self,
        thetas: &[ParamVector],
        exec: Exec,
    ) -> Vec<std::result::Result<f64, EvalError>> {
        let exec = if self.concurrent() {
            exec
        } else {
            Exec::Sequential
        };
        par::map_slice(thetas, exec, |t| self.evaluate(t))
    }
}

impl<B: BlackBox + ?Sized> BlackBox for Box<B> {
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError> {
        (**self).evaluate(theta)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }

    fn evaluate_batch(
        &self,
        thetas: &[ParamVector],
        exec: Exec,
    ) -> Vec<std::result::Result<f64, EvalError>> {
        (**self).evaluate_batch(thetas, exec)
    }
}

/// Evaluate a batch and surface the first failure (in index order) with its
/// `theta` attached. Non-finite fitness values count as failures.
pub fn evaluate_all<B: BlackBox + ?Sized>(
    bb: &B,
    thetas: &[ParamVector],
    exec: Exec,
) -> Result<Vec<f64>> {
    let results = bb.evaluate_batch(thetas, exec);
    let mut out = Vec::with_capacity(results.len());
    for (theta, r) in thetas.iter().zip(results) {
        match r {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(Error::Eval {
                    theta: theta.to_vec(),
                    source: EvalError::new(format!("non-finite fitness {v}")),
                })
            }
            Err(source) => {
                return Err(Error::Eval {
                    theta: theta.to_vec(),
                    source,
                })
            }
        }
    }
    Ok(out)
}

/// Closure-backed black box, mostly for tests and toy scenarios.
pub struct FnBlackBox<F> {
    descriptor: String,
    f: F,
}

impl<F> FnBlackBox<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(descriptor: impl Into<String>, f: F) -> Self {
        Self {
            descriptor: descriptor.into(),
            f,
        }
    }
}

impl<F> BlackBox for FnBlackBox<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError> {
        Ok((self.f)(theta))
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }
}

/// `blackbox` section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlackBoxConfig {
    Builtin(crate::testbed::BuiltinConfig),
    Subprocess(crate::subprocess::SubprocessConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub tol: f64,
    pub budget: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        let bab = BabConfig::default();
        Self {
            tol: bab.tol,
            budget: bab.budget,
        }
    }
}

/// Scenario configuration file.
///
/// `name`, `tau`, `parameters` and `blackbox` are required; `learn` and
/// `verify` fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub tau: f64,
    pub parameters: ParamSpace,
    pub blackbox: BlackBoxConfig,
    #[serde(default)]
    pub learn: LearnConfig,
    #[serde(default)]
    pub verify: VerifySettings,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        if !cfg.tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite, got {}", cfg.tau)));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn safety(&self) -> SafetySpec {
        SafetySpec {
            tau: self.tau,
            measure_id: "distance".into(),
        }
    }

    /// Instantiate the configured simulator.
    pub fn build_blackbox(&self) -> Result<Box<dyn BlackBox>> {
        match &self.blackbox {
            BlackBoxConfig::Builtin(b) => Ok(Box::new(crate::testbed::builtin_blackbox_with(
                b,
                &self.parameters,
            )?)),
            BlackBoxConfig::Subprocess(s) => Ok(Box::new(
                crate::subprocess::SubprocessBlackBox::new(s.clone())?.with_space(self.parameters.clone()),
            )),
        }
    }
}

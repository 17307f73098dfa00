//! Sound output bounds, branch-and-bound and threshold certification for
//! [`Mlp`] networks over axis-aligned boxes of the normalized parameter space.

mod bab;
mod interval;
mod relaxation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::scenario::ParamVector;

pub use bab::{bab_min, BabConfig, BabResult};
pub use interval::interval_bounds;
pub use relaxation::relaxation_bounds;

/// Relative outward margin on back-substituted bounds, whose coefficients
/// carry rounding error from the substitution itself.
const ROUND_SLACK: f64 = 1e-11;

/// Widen `[l, u]` by a margin covering floating-point error of a sum whose
/// terms have total magnitude `mag`.
pub(crate) fn outward(l: f64, u: f64, mag: f64) -> (f64, f64) {
    let eps = ROUND_SLACK * mag;
    (l - eps, u + eps)
}

/// Running sum that tracks the exact rounding error of every operation, so
/// it can be rounded outward only when something was actually lost.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TightSum {
    sum: f64,
    err: f64,
}

impl TightSum {
    pub fn new(x: f64) -> Self {
        Self { sum: x, err: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let s = self.sum + x;
        let bp = s - self.sum;
        let e = (self.sum - (s - bp)) + (x - bp);
        self.sum = s;
        self.err += e.abs();
    }

    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p);
        self.err += e.abs();
    }

    pub fn lower(&self) -> f64 {
        if self.err == 0.0 {
            self.sum
        } else {
            (self.sum - self.err * (1.0 + 1e-9)).next_down()
        }
    }

    pub fn upper(&self) -> f64 {
        if self.err == 0.0 {
            self.sum
        } else {
            (self.sum + self.err * (1.0 + 1e-9)).next_up()
        }
    }
}

/// Map raw network bounds through the output de-standardization.
pub(crate) fn scale_output(f: &Mlp, zl: f64, zu: f64) -> (f64, f64) {
    let (s, m) = (f.out_std(), f.out_mean());
    let mut l = TightSum::new(m);
    l.add_product(s, zl);
    let mut u = TightSum::new(m);
    u.add_product(s, zu);
    (l.lower(), u.upper())
}

/// Closed axis-aligned box inside `[0,1]^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidSpace("box must have at least one dimension".into()));
        }
        for (index, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::OutOfUnitRange { index, value: a });
            }
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::OutOfUnitRange { index, value: b });
            }
            if a > b {
                return Err(Error::InvalidSpace(format!("box dimension {index}: lo {a} > hi {b}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[0,1]^m`.
    pub fn unit(m: usize) -> Self {
        Self {
            lo: vec![0.0; m],
            hi: vec![1.0; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (a, b))| a <= t && t <= b)
    }

    /// Index and width of the widest dimension (lowest index on ties).
    pub fn widest(&self) -> (usize, f64) {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, w)| if w > best.1 { (i, w) } else { best })
    }

    /// Halves at the midpoint of dimension `dim`; both share the cut face.
    pub fn split(&self, dim: usize) -> (ParamBox, ParamBox) {
        let mid = 0.5 * (self.lo[dim] + self.hi[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = mid;
        right.lo[dim] = mid;
        (left, right)
    }

    /// Map a point of the unit cube affinely into the box.
    pub fn point_at(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (a, b))| (a + t * (b - a)).clamp(*a, *b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    Interval,
    LinearRelaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub lower: f64,
    pub upper: f64,
    pub method: BoundMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Safe,
    Unsafe,
    Unknown,
}

impl Status {
    /// Process exit code: 0 safe, 2 unsafe, 3 unknown.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Safe => 0,
            Status::Unsafe => 2,
            Status::Unknown => 3,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Safe => "SAFE",
            Status::Unsafe => "UNSAFE",
            Status::Unknown => "UNKNOWN",
        })
    }
}

/// Outcome of [`certify`]; serializes to the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub status: Status,
    pub certified_lower: f64,
    pub threshold: f64,
    pub counterexample: Option<ParamVector>,
    pub counterexample_value: Option<f64>,
    pub nodes_explored: usize,
    pub tol: f64,
    pub budget: usize,
}

/// Decide whether `f >= threshold` on the whole box.
///
/// SAFE when the certified lower bound reaches the threshold, UNSAFE when a
/// concrete point below it is found (reported with its exact network value),
/// UNKNOWN when the budget runs out first. Search continues past `tol` while
/// the threshold is undecided.
pub fn certify(f: &Mlp, bx: &ParamBox, threshold: f64, cfg: &BabConfig) -> VerificationResult {
    let run = BabConfig {
        tol: 0.0,
        stop_if_lower_at_least: Some(threshold),
        stop_if_upper_below: Some(threshold),
        ..cfg.clone()
    };
    let r = bab_min(f, bx, &run);
    let mut out = VerificationResult {
        status: Status::Unknown,
        certified_lower: r.lower,
        threshold,
        counterexample: None,
        counterexample_value: None,
        nodes_explored: r.nodes_explored,
        tol: cfg.tol,
        budget: cfg.budget,
    };
    let value = f.value(&r.witness);
    if r.lower >= threshold {
        out.status = Status::Safe;
    } else if value < threshold {
        out.status = Status::Unsafe;
        out.counterexample = Some(r.witness);
        out.counterexample_value = Some(value);
    }
    out
}

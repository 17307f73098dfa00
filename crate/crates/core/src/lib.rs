//! Surrogate-based safety analysis for black-box driving scenarios.
//!
//! The crate learns a ReLU network approximating a scenario's fitness
//! function (the minimum of a quantitative measure over a simulation), bounds
//! its approximation error with a sample-complexity guarantee, certifies the
//! safety threshold on the network with sound bound propagation plus
//! input-splitting branch-and-bound, and maps a 2-D slice of the parameter
//! space into a grid of certified unsafe indicators.
//!
//! Module map:
//!
//! - [`scenario`]: parameter spaces, measure traces, the [`BlackBox`] contract
//!   and the scenario configuration file.
//! - [`testbed`]: deterministic braking and crossing simulators with analytic
//!   oracles.
//! - [`mlp`], [`pgd`], [`learn`]: the surrogate network, extreme-point search
//!   and the iterative learning loop.
//! - [`verifier`]: interval and linear-relaxation bounds, branch-and-bound,
//!   certification.
//! - [`pac`]: sample sizes, absolute-distance estimation, outlier filtering
//!   and end-to-end scenario verification.
//! - [`explore`]: grid cells, unsafe indicators, heatmap CSV/SVG.
//! - [`subprocess`]: newline-delimited JSON protocol for external simulators.
//! - [`par`]: data-parallel map with a sequential fallback.

pub mod error;
pub mod explore;
pub mod learn;
pub mod mlp;
pub mod pac;
pub mod par;
pub mod pgd;
pub mod scenario;
pub mod subprocess;
pub mod testbed;
pub mod verifier;

mod rng;

pub use error::{Error, EvalError, Result};
pub use explore::{explore, refine, safe_region, unsafe_indicator, ExploreConfig, GridSpec, Heatmap};
pub use learn::{learn_surrogate, Dataset, LearnConfig, LearnOutcome};
pub use mlp::{Mlp, TrainConfig};
pub use pac::{
    estimate_lambda, outlier_filter, required_samples, verify_scenario, OutlierReport,
    PacCertificate, ScenarioVerdict,
};
pub use par::Exec;
pub use pgd::{pgd_extremes, Direction, PgdConfig};
pub use scenario::{BlackBox, MeasureTrace, ParamSpace, ParamSpec, ParamVector, SafetySpec};
pub use verifier::{
    bab_min, certify, interval_bounds, relaxation_bounds, BabConfig, BabResult, BoundMethod,
    BoundResult, ParamBox, Status, VerificationResult,
};

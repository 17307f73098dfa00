//! Projected sign-gradient search for extreme outputs of a network.

use serde::{Deserialize, Serialize};

use crate::mlp::Mlp;
use crate::rng;
use crate::scenario::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub steps: usize,
    /// Fraction of the box width moved per step along each axis.
    pub step_size: f64,
    pub restarts: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.05,
            restarts: 10,
        }
    }
}

/// Up to `n` distinct points of `[0,1]^m` where `f` is smallest (or largest),
/// best first.
///
/// Each restart starts from a seeded uniform point and takes `steps` steps
/// `theta <- clip(theta -/+ step_size * sign(grad))`; a restart contributes the
/// best point along its trajectory. At least `n` restarts are run.
pub fn pgd_extremes(
    f: &Mlp,
    n: usize,
    direction: Direction,
    cfg: &PgdConfig,
    seed: u64,
) -> Vec<ParamVector> {
    if n == 0 {
        return Vec::new();
    }
    let m = f.input_dim();
    let cfg = PgdConfig {
        restarts: cfg.restarts.max(n),
        ..*cfg
    };
    search_box(f, &vec![0.0; m], &vec![1.0; m], direction, &cfg, seed)
        .into_iter()
        .take(n)
        .map(|(x, _)| ParamVector::clamped(x))
        .collect()
}

/// PGD restricted to the box `[lo, hi]`; returns distinct `(point, value)`
/// pairs sorted best first.
pub(crate) fn search_box(
    f: &Mlp,
    lo: &[f64],
    hi: &[f64],
    direction: Direction,
    cfg: &PgdConfig,
    seed: u64,
) -> Vec<(Vec<f64>, f64)> {
    let sign = match direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    // Objective is always minimized: sign * f.
    let mut rng = rng::seeded(seed);
    let mut found: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.restarts);
    for _ in 0..cfg.restarts {
        let mut x: Vec<f64> = rng::uniform_point(&mut rng, lo.len())
            .into_iter()
            .zip(lo.iter().zip(hi))
            .map(|(u, (&l, &h))| (l + u * (h - l)).clamp(l, h))
            .collect();
        let (v0, mut g) = f.value_and_grad(&x);
        let mut best = (x.clone(), sign * v0);
        for _ in 0..cfg.steps {
            for i in 0..x.len() {
                let step = cfg.step_size * (hi[i] - lo[i]);
                let s = sign * g[i];
                if s > 0.0 {
                    x[i] = (x[i] - step).max(lo[i]);
                } else if s < 0.0 {
                    x[i] = (x[i] + step).min(hi[i]);
                }
            }
            let (v, grad) = f.value_and_grad(&x);
            g = grad;
            if sign * v < best.1 {
                best = (x.clone(), sign * v);
            }
        }
        found.push(best);
    }
    found.sort_by(|a, b| {
        a.1.total_cmp(&b.1).then_with(|| {
            a.0.iter()
                .zip(&b.0)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    found.dedup_by(|a, b| a.0 == b.0);
    found
        .into_iter()
        .map(|(x, obj)| (x, sign * obj))
        .collect()
}

//! Best-first input-splitting branch-and-bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::mlp::Mlp;
use crate::pgd::{self, Direction, PgdConfig};
use crate::rng::derive_seed;
use crate::scenario::ParamVector;

use super::relaxation::relax;
use super::{scale_output, ParamBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BabConfig {
    /// Stop once `upper - lower <= tol`.
    pub tol: f64,
    /// Maximum number of node expansions (splits).
    pub budget: usize,
    /// Stop as soon as the certified lower bound reaches this value.
    pub stop_if_lower_at_least: Option<f64>,
    /// Stop as soon as a point with value below this is found.
    pub stop_if_upper_below: Option<f64>,
    /// PGD restarts run inside each node up to `pgd_depth`.
    pub pgd_restarts: usize,
    pub pgd_depth: usize,
    pub pgd_steps: usize,
    pub seed: u64,
}

impl Default for BabConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            budget: 20_000,
            stop_if_lower_at_least: None,
            stop_if_upper_below: None,
            pgd_restarts: 5,
            pgd_depth: 3,
            pgd_steps: 30,
            seed: 0,
        }
    }
}

impl BabConfig {
    pub fn with_limits(tol: f64, budget: usize) -> Self {
        Self {
            tol,
            budget,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BabResult {
    /// Certified: `lower <= f(theta)` for every `theta` in the box.
    pub lower: f64,
    /// `f(witness)`.
    pub upper: f64,
    pub witness: ParamVector,
    /// Nodes whose bounds were computed.
    pub nodes_explored: usize,
    /// `upper - lower <= tol` was reached.
    pub converged: bool,
    /// The expansion budget ran out first.
    pub exhausted: bool,
}

struct Node {
    lower: f64,
    seq: u64,
    depth: usize,
    bx: ParamBox,
    coef: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed so that `BinaryHeap` pops the smallest (lower, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lower
            .total_cmp(&self.lower)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    f: &'a Mlp,
    cfg: &'a BabConfig,
    upper: f64,
    witness: Vec<f64>,
    nodes: usize,
    seq: u64,
}

impl Search<'_> {
    fn offer(&mut self, x: &[f64]) {
        let v = self.f.value(x);
        if v < self.upper {
            self.upper = v;
            self.witness = x.to_vec();
        }
    }

    /// Bound a node and try its incumbent candidates.
    fn evaluate(&mut self, bx: ParamBox, depth: usize) -> Node {
        let r = relax(self.f, bx.lo(), bx.hi());
        let (lower, _) = scale_output(self.f, r.lower(), r.upper());
        self.nodes += 1;
        let seq = self.seq;
        self.seq += 1;
        self.offer(&bx.center());
        self.offer(&r.argmin);
        if depth <= self.cfg.pgd_depth && self.cfg.pgd_restarts > 0 {
            let pcfg = PgdConfig {
                steps: self.cfg.pgd_steps,
                step_size: 0.05,
                restarts: self.cfg.pgd_restarts,
            };
            let found = pgd::search_box(
                self.f,
                bx.lo(),
                bx.hi(),
                Direction::Min,
                &pcfg,
                derive_seed(self.cfg.seed, seq),
            );
            if let Some((x, _)) = found.first() {
                self.offer(x);
            }
        }
        Node {
            lower,
            seq,
            depth,
            bx,
            coef: r.coef,
        }
    }
}

/// Dimension maximizing `|c_d| * width_d`, where `c` holds the input
/// coefficients of the node's linear lower bound; the widest dimension when
/// the bound is flat. Returns the dimension and its width.
fn split_dim(node: &Node) -> (usize, f64) {
    let (lo, hi) = (node.bx.lo(), node.bx.hi());
    let mut best = (0, 0.0);
    for d in 0..lo.len() {
        let score = node.coef[d].abs() * (hi[d] - lo[d]);
        if score > best.1 {
            best = (d, score);
        }
    }
    if best.1 > 0.0 {
        (best.0, hi[best.0] - lo[best.0])
    } else {
        node.bx.widest()
    }
}

/// Bracket the minimum of `f` over `bx`.
///
/// Nodes are expanded in order of their relaxation lower bound (ties by
/// creation order) and split at the midpoint of the dimension along which
/// the linear lower bound varies most. The
/// incumbent is the best of the node centers, the corners minimizing each
/// node's linear lower bound, and PGD endpoints in shallow nodes. Guarantees
/// `lower <= min f <= upper = f(witness)`.
///
/// # Panics
/// If the box dimension differs from the network input dimension.
pub fn bab_min(f: &Mlp, bx: &ParamBox, cfg: &BabConfig) -> BabResult {
    assert_eq!(bx.dim(), f.input_dim(), "box dimension");
    let mut s = Search {
        f,
        cfg,
        upper: f64::INFINITY,
        witness: bx.center(),
        nodes: 0,
        seq: 0,
    };
    let mut heap = BinaryHeap::new();
    heap.push(s.evaluate(bx.clone(), 0));
    // Smallest lower bound among leaves dropped from the frontier.
    let mut closed = f64::INFINITY;
    let mut expansions = 0usize;

    let (lower, converged, exhausted) = loop {
        let open = heap.peek().map_or(f64::INFINITY, |n| n.lower);
        let lower = open.min(closed);
        if s.upper - lower <= cfg.tol {
            break (lower, true, false);
        }
        if cfg.stop_if_lower_at_least.is_some_and(|t| lower >= t)
            || cfg.stop_if_upper_below.is_some_and(|t| s.upper < t)
        {
            break (lower, false, false);
        }
        if expansions >= cfg.budget {
            break (lower, false, true);
        }
        let node = heap.pop().expect("open min is finite here");
        let tiny = f64::EPSILON * 4.0;
        let (mut dim, width) = split_dim(&node);
        if width <= tiny {
            dim = node.bx.widest().0;
        }
        if node.bx.widest().1 <= tiny {
            // Too small to split further; its bound is as good as it gets.
            closed = closed.min(node.lower);
            continue;
        }
        expansions += 1;
        let (a, b) = node.bx.split(dim);
        for child in [a, b] {
            let n = s.evaluate(child, node.depth + 1);
            if n.lower >= s.upper - cfg.tol {
                closed = closed.min(n.lower);
            } else {
                heap.push(n);
            }
        }
    };

    BabResult {
        lower: lower.min(s.upper),
        upper: s.upper,
        witness: ParamVector::clamped(s.witness),
        nodes_explored: s.nodes,
        converged,
        exhausted,
    }
}

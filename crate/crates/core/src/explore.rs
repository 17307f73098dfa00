//! Grid exploration of two associated parameters: certified unsafe indicators
//! per cell, the safe-region under-approximation, CSV and SVG output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::par::{self, Exec};
use crate::verifier::{bab_min, BabConfig, ParamBox};

/// `l x l` grid over dimensions `dim_a` and `dim_b` of an `m`-dimensional
/// space; the cell side is `1/l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim_a: usize,
    pub dim_b: usize,
    pub l: usize,
    pub m: usize,
}

impl GridSpec {
    pub fn new(dim_a: usize, dim_b: usize, l: usize, m: usize) -> Result<Self> {
        if dim_a == dim_b {
            return Err(Error::Config(format!("grid dimensions must differ, both are {dim_a}")));
        }
        if dim_a >= m || dim_b >= m {
            return Err(Error::Config(format!(
                "grid dimensions ({dim_a}, {dim_b}) out of range for {m} parameters"
            )));
        }
        if l == 0 {
            return Err(Error::Config("grid side must be at least 1".into()));
        }
        Ok(Self { dim_a, dim_b, l, m })
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.l as f64
    }

    /// `[i/l, (i+1)/l]`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let l = self.l as f64;
        (i as f64 / l, (i + 1) as f64 / l)
    }

    /// Index of the cell containing a coordinate (the upper cell on shared
    /// faces, the last cell at 1).
    pub fn index_of(&self, x: f64) -> usize {
        ((x * self.l as f64).floor() as usize).min(self.l - 1)
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.l || j >= self.l {
            return Err(Error::GridIndex { i, j, l: self.l });
        }
        Ok(())
    }
}

/// Closed cell `(i, j)`: dimensions a and b restricted to their intervals,
/// all others free in `[0, 1]`.
pub fn cell_box(spec: &GridSpec, i: usize, j: usize) -> Result<ParamBox> {
    spec.check(i, j)?;
    let mut lo = vec![0.0; spec.m];
    let mut hi = vec![1.0; spec.m];
    (lo[spec.dim_a], hi[spec.dim_a]) = spec.interval(i);
    (lo[spec.dim_b], hi[spec.dim_b]) = spec.interval(j);
    ParamBox::new(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    pub tol: f64,
    pub budget: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        let bab = BabConfig::default();
        Self {
            tol: bab.tol,
            budget: bab.budget,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellIndicator {
    /// `max(0, tau - lower)`.
    pub rho_ind: f64,
    /// Certified lower bound of `f` over the cell.
    pub lower: f64,
    /// The search budget ran out before the gap closed.
    pub flagged: bool,
}

/// Conservative unsafe indicator of one cell; zero certifies `f >= tau` on it.
pub fn unsafe_indicator(f: &Mlp, cell: &ParamBox, tau: f64, cfg: &ExploreConfig) -> CellIndicator {
    let bab = BabConfig {
        tol: cfg.tol,
        budget: cfg.budget,
        stop_if_lower_at_least: Some(tau),
        seed: cfg.seed,
        ..BabConfig::default()
    };
    let r = bab_min(f, cell, &bab);
    CellIndicator {
        rho_ind: (tau - r.lower).max(0.0),
        lower: r.lower,
        flagged: r.exhausted,
    }
}

/// Per-cell indicators, indexed `[i][j]` with `i` along dimension a.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub spec: GridSpec,
    pub tau: f64,
    pub rho_indicator: Vec<Vec<f64>>,
    pub lower_bounds: Vec<Vec<f64>>,
    pub flags: Vec<Vec<bool>>,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub i: usize,
    pub j: usize,
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
    pub lower_bound: f64,
    pub rho_indicator: f64,
    pub flag: bool,
}

pub fn explore(f: &Mlp, spec: &GridSpec, tau: f64, cfg: &ExploreConfig) -> Result<Heatmap> {
    sweep(f, spec, tau, cfg, |_, _| f64::NEG_INFINITY)
}

/// Re-explore `coarse` on a grid twice as fine.
///
/// Each child cell lies inside its parent, so the parent's certified lower
/// bound also holds on the child; a child keeps the larger of the two. Child
/// indicators therefore never exceed their parent's.
pub fn refine(f: &Mlp, coarse: &Heatmap, cfg: &ExploreConfig) -> Result<Heatmap> {
    let c = coarse.spec;
    let spec = GridSpec::new(c.dim_a, c.dim_b, c.l * 2, c.m)?;
    sweep(f, &spec, coarse.tau, cfg, |i, j| coarse.lower_bounds[i / 2][j / 2])
}

fn sweep(
    f: &Mlp,
    spec: &GridSpec,
    tau: f64,
    cfg: &ExploreConfig,
    floor: impl Fn(usize, usize) -> f64 + Sync + Send,
) -> Result<Heatmap> {
    if spec.m != f.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.input_dim(),
            got: spec.m,
        });
    }
    if !tau.is_finite() {
        return Err(Error::Config(format!("tau must be finite, got {tau}")));
    }
    let l = spec.l;
    let cells = par::map_indexed(l * l, cfg.exec, |idx| {
        let (i, j) = (idx / l, idx % l);
        let cell = cell_box(spec, i, j).expect("index in range");
        let mut c = unsafe_indicator(f, &cell, tau, cfg);
        let inherited = floor(i, j);
        if inherited > c.lower {
            c.lower = inherited;
            c.rho_ind = (tau - inherited).max(0.0);
        }
        c
    });
    let mut h = Heatmap {
        spec: *spec,
        tau,
        rho_indicator: vec![vec![0.0; l]; l],
        lower_bounds: vec![vec![0.0; l]; l],
        flags: vec![vec![false; l]; l],
    };
    for (idx, c) in cells.into_iter().enumerate() {
        let (i, j) = (idx / l, idx % l);
        h.rho_indicator[i][j] = c.rho_ind;
        h.lower_bounds[i][j] = c.lower;
        h.flags[i][j] = c.flagged;
    }
    Ok(h)
}

/// Cells with a zero indicator, in `(i, j)` order.
pub fn safe_region(h: &Heatmap) -> Vec<(usize, usize)> {
    let l = h.spec.l;
    (0..l)
        .flat_map(|i| (0..l).map(move |j| (i, j)))
        .filter(|&(i, j)| h.rho_indicator[i][j] == 0.0)
        .collect()
}

impl Heatmap {
    pub fn rows(&self) -> Vec<CellRow> {
        let l = self.spec.l;
        let mut rows = Vec::with_capacity(l * l);
        for i in 0..l {
            for j in 0..l {
                let (a_lo, a_hi) = self.spec.interval(i);
                let (b_lo, b_hi) = self.spec.interval(j);
                rows.push(CellRow {
                    i,
                    j,
                    a_lo,
                    a_hi,
                    b_lo,
                    b_hi,
                    lower_bound: self.lower_bounds[i][j],
                    rho_indicator: self.rho_indicator[i][j],
                    flag: self.flags[i][j],
                });
            }
        }
        rows
    }

    /// Indicator of the cell containing `theta`.
    pub fn indicator_at(&self, theta: &[f64]) -> f64 {
        let i = self.spec.index_of(theta[self.spec.dim_a]);
        let j = self.spec.index_of(theta[self.spec.dim_b]);
        self.rho_indicator[i][j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_cells(&self.rows(), w)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn write_cells<W: Write>(rows: &[CellRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cells<R: Read>(r: R) -> Result<Vec<CellRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<CellRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Config("heatmap has no cells".into()));
    }
    Ok(rows)
}

/// White for zero, dark red for the largest indicator.
fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 103.0), lerp(255.0, 0.0), lerp(255.0, 13.0))
}

/// SVG grid of the indicators, darker meaning larger, with a linear legend
/// from 0 to the maximum. Dimension a runs left to right, b bottom to top.
pub fn render_svg(rows: &[CellRow], title: &str) -> Result<String> {
    let l = rows.iter().map(|r| r.i.max(r.j) + 1).max().unwrap_or(0);
    if l == 0 || rows.len() != l * l {
        return Err(Error::Config(format!(
            "expected a square grid of cells, got {} rows",
            rows.len()
        )));
    }
    let max = rows.iter().map(|r| r.rho_indicator).fold(0.0, f64::max);
    let cell = (480 / l).max(4);
    let side = cell * l;
    let (margin, legend_w) = (40, 90);
    let width = margin * 2 + side + legend_w;
    let height = margin * 2 + side;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{margin}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    ));
    for r in rows {
        let t = if max > 0.0 { r.rho_indicator / max } else { 0.0 };
        let x = margin + r.i * cell;
        let y = margin + (l - 1 - r.j) * cell;
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#cccccc\" stroke-width=\"0.5\"><title>({}, {}) rho={}</title></rect>\n",
            shade(t),
            r.i,
            r.j,
            r.rho_indicator
        ));
    }
    let lx = margin * 2 + side;
    let steps = 20;
    let bar_h = side / steps;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        s.push_str(&format!(
            "<rect x=\"{lx}\" y=\"{}\" width=\"16\" height=\"{bar_h}\" fill=\"{}\"/>\n",
            margin + k * bar_h,
            shade(t)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{max:.4}</text>\n",
        lx + 20,
        margin + 10
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n",
        lx + 20,
        margin + steps * bar_h
    ));
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

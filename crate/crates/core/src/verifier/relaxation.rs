//! Back-substituted linear relaxation of ReLU networks.

use crate::mlp::Mlp;

use super::interval::affine_interval;
use super::{outward, BoundMethod, BoundResult, ParamBox};

/// Linear bounds `lo_slope * z <= relu(z) <= up_slope * z + up_icpt` of one
/// neuron with pre-activation in `[l, u]`.
#[derive(Debug, Clone, Copy)]
struct NeuronRelax {
    lo_slope: f64,
    up_slope: f64,
    up_icpt: f64,
}

impl NeuronRelax {
    fn new(l: f64, u: f64) -> Self {
        if u <= 0.0 {
            Self {
                lo_slope: 0.0,
                up_slope: 0.0,
                up_icpt: 0.0,
            }
        } else if l >= 0.0 {
            Self {
                lo_slope: 1.0,
                up_slope: 1.0,
                up_icpt: 0.0,
            }
        } else {
            let s = u / (u - l);
            Self {
                lo_slope: if -l >= u { 0.0 } else { 1.0 },
                up_slope: s,
                up_icpt: -s * l,
            }
        }
    }
}

/// Output of one relaxation pass, before output scaling.
#[derive(Debug, Clone)]
pub(crate) struct Relaxed {
    /// Back-substituted bounds alone.
    pub linear: (f64, f64),
    /// Interval bounds computed alongside.
    pub interval: (f64, f64),
    /// Corner of the box minimizing the linear lower bound of the output.
    pub argmin: Vec<f64>,
    /// Input coefficients of that linear lower bound.
    pub coef: Vec<f64>,
}

impl Relaxed {
    pub fn lower(&self) -> f64 {
        self.linear.0.max(self.interval.0)
    }

    pub fn upper(&self) -> f64 {
        self.linear.1.min(self.interval.1)
    }
}

/// Linear form `coef . x + cst` over the input; `coef` is row-major when
/// several forms are held together.
struct Forms {
    rows: usize,
    cols: usize,
    coef: Vec<f64>,
    cst: Vec<f64>,
}

/// Bound every neuron of layer `k` by back-substitution through the already
/// relaxed layers `0..k`. Returns `(lower, upper, lower_forms)` where the
/// forms are the input-space linear lower bounds.
fn back_substitute(
    f: &Mlp,
    k: usize,
    relax: &[Vec<NeuronRelax>],
    lo: &[f64],
    hi: &[f64],
) -> (Vec<f64>, Vec<f64>, Forms) {
    let lower = substitute(f, k, relax, true);
    let upper = substitute(f, k, relax, false);
    let l = concretize(&lower, lo, hi, true);
    let u = concretize(&upper, lo, hi, false);
    (l, u, lower)
}

fn substitute(f: &Mlp, k: usize, relax: &[Vec<NeuronRelax>], want_lower: bool) -> Forms {
    let layers = f.layers();
    let top = &layers[k];
    let mut forms = Forms {
        rows: top.n_out(),
        cols: top.n_in(),
        coef: top.weights().to_vec(),
        cst: top.biases().to_vec(),
    };
    for j in (0..k).rev() {
        // `forms` multiplies relu(z_j); swap in the neuron relaxations.
        for r in 0..forms.rows {
            let row = &mut forms.coef[r * forms.cols..(r + 1) * forms.cols];
            for (c, nr) in row.iter_mut().zip(&relax[j]) {
                let use_lower = (*c >= 0.0) == want_lower;
                if use_lower {
                    *c *= nr.lo_slope;
                } else {
                    forms.cst[r] += *c * nr.up_icpt;
                    *c *= nr.up_slope;
                }
            }
        }
        // Now it multiplies z_j = W_j a_{j-1} + b_j.
        let layer = &layers[j];
        let n_in = layer.n_in();
        let mut coef = vec![0.0; forms.rows * n_in];
        for r in 0..forms.rows {
            let row = &forms.coef[r * forms.cols..(r + 1) * forms.cols];
            let out = &mut coef[r * n_in..(r + 1) * n_in];
            for (q, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                forms.cst[r] += c * layer.biases()[q];
                for (o, w) in out.iter_mut().zip(layer.row(q)) {
                    *o += c * w;
                }
            }
        }
        forms.coef = coef;
        forms.cols = n_in;
    }
    forms
}

fn concretize(forms: &Forms, lo: &[f64], hi: &[f64], want_lower: bool) -> Vec<f64> {
    (0..forms.rows)
        .map(|r| {
            let row = &forms.coef[r * forms.cols..(r + 1) * forms.cols];
            let mut acc = forms.cst[r];
            let mut mag = acc.abs();
            for ((&c, &a), &b) in row.iter().zip(lo).zip(hi) {
                let x = if (c >= 0.0) == want_lower { a } else { b };
                acc += c * x;
                mag += (c * x).abs();
            }
            let (l, u) = outward(acc, acc, mag);
            if want_lower {
                l
            } else {
                u
            }
        })
        .collect()
}

/// Full relaxation pass over `[lo, hi]`.
///
/// Every neuron's bounds are the intersection of its back-substituted bounds
/// with interval bounds propagated from the previous (already intersected)
/// layer; the next layer's relaxation is built from the intersection.
pub(crate) fn relax(f: &Mlp, lo: &[f64], hi: &[f64]) -> Relaxed {
    let layers = f.layers();
    let last = layers.len() - 1;
    let mut relax: Vec<Vec<NeuronRelax>> = Vec::with_capacity(last);
    let mut a_lo = lo.to_vec();
    let mut a_hi = hi.to_vec();
    for k in 0..=last {
        let (il, iu) = affine_interval(&layers[k], &a_lo, &a_hi);
        if k == last {
            let (dl, du, forms) = back_substitute(f, k, &relax, lo, hi);
            let argmin = forms.coef[..forms.cols]
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&c, (&a, &b))| if c > 0.0 { a } else if c < 0.0 { b } else { 0.5 * (a + b) })
                .collect();
            return Relaxed {
                linear: (dl[0], du[0]),
                interval: (il[0], iu[0]),
                argmin,
                coef: forms.coef[..forms.cols].to_vec(),
            };
        }
        let (l, u) = if k == 0 {
            (il, iu)
        } else {
            let (dl, du, _) = back_substitute(f, k, &relax, lo, hi);
            (
                il.iter().zip(&dl).map(|(a, b)| a.max(*b)).collect::<Vec<_>>(),
                iu.iter().zip(&du).map(|(a, b)| a.min(*b)).collect::<Vec<_>>(),
            )
        };
        relax.push(l.iter().zip(&u).map(|(&l, &u)| NeuronRelax::new(l, u)).collect());
        a_lo = l.iter().map(|v| v.max(0.0)).collect();
        a_hi = u.iter().map(|v| v.max(0.0)).collect();
    }
    unreachable!("loop returns at the output layer")
}

/// Sound output range of `f` over `bx` by linear relaxation: the reported
/// bounds are the tighter of the back-substituted and the interval bounds.
///
/// # Panics
/// If the box dimension differs from the network input dimension.
pub fn relaxation_bounds(f: &Mlp, bx: &ParamBox) -> BoundResult {
    assert_eq!(bx.dim(), f.input_dim(), "box dimension");
    let r = relax(f, bx.lo(), bx.hi());
    let (lower, upper) = super::scale_output(f, r.lower(), r.upper());
    BoundResult {
        lower,
        upper,
        method: BoundMethod::LinearRelaxation,
    }
}

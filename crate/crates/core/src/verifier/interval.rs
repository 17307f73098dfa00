//! Interval arithmetic through affine and ReLU layers.

use crate::mlp::{Layer, Mlp};

use super::{BoundMethod, BoundResult, ParamBox, TightSum};

/// Interval image of `layer` applied to the box `[lo, hi]`.
pub(crate) fn affine_interval(layer: &Layer, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = Vec::with_capacity(layer.n_out());
    let mut out_hi = Vec::with_capacity(layer.n_out());
    for r in 0..layer.n_out() {
        let b = layer.biases()[r];
        let (mut l, mut u) = (TightSum::new(b), TightSum::new(b));
        for ((&w, &a), &z) in layer.row(r).iter().zip(lo).zip(hi) {
            let (p, q) = if w >= 0.0 { (a, z) } else { (z, a) };
            l.add_product(w, p);
            u.add_product(w, q);
        }
        out_lo.push(l.lower());
        out_hi.push(u.upper());
    }
    (out_lo, out_hi)
}

/// Network output range on `[lo, hi]` by interval propagation, before output
/// scaling.
pub(crate) fn raw_interval(f: &Mlp, lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let layers = f.layers();
    let mut a_lo = lo.to_vec();
    let mut a_hi = hi.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        let (l, u) = affine_interval(layer, &a_lo, &a_hi);
        if k + 1 == layers.len() {
            return (l[0], u[0]);
        }
        a_lo = l.into_iter().map(|v| v.max(0.0)).collect();
        a_hi = u.into_iter().map(|v| v.max(0.0)).collect();
    }
    unreachable!("networks have at least one layer")
}

/// Sound output range of `f` over `bx` by interval arithmetic.
///
/// # Panics
/// If the box dimension differs from the network input dimension.
pub fn interval_bounds(f: &Mlp, bx: &ParamBox) -> BoundResult {
    assert_eq!(bx.dim(), f.input_dim(), "box dimension");
    let (zl, zu) = raw_interval(f, bx.lo(), bx.hi());
    let (lower, upper) = super::scale_output(f, zl, zu);
    BoundResult {
        lower,
        upper,
        method: BoundMethod::Interval,
    }
}

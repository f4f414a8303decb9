//! Central finite-difference verification of analytic gradients.

use super::{GradGraph, Tensor, Value};
use crate::{Error, Result};

/// Compare the analytic gradient of `f` at `point` against central finite
/// differences, coordinate by coordinate.
///
/// Returns the maximum over coordinates of
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
///
/// `f` must build a scalar from the bound input and be deterministic: it is
/// re-evaluated twice per coordinate.
pub fn finite_diff_check<F>(f: F, point: &Tensor, epsilon: f32) -> Result<f32>
where
    F: Fn(&mut GradGraph, Value) -> Result<Value>,
{
    let mut probe = point.clone();
    probe.requires_grad = true;

    let mut graph = GradGraph::new();
    let x = graph.leaf(&probe);
    let y = f(&mut graph, x)?;
    if !graph.value(y).data()[0].is_finite() {
        return Err(Error::NonFinite("finite_diff_check function value".into()));
    }
    graph.backward(y)?;
    let analytic = graph.grad(x).expect("input requires grad").to_vec();

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = GradGraph::new();
        let x = g.leaf(t);
        let y = f(&mut g, x)?;
        let v = g.scalar_f64(y);
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_diff_check function value".into()));
        }
        Ok(v)
    };

    let mut worst = 0.0f32;
    let mut shifted = point.clone();
    for i in 0..point.numel() {
        let orig = point.data()[i];
        shifted.data_mut()[i] = orig + epsilon;
        let up = shifted.data()[i];
        let plus = eval(&shifted)?;
        shifted.data_mut()[i] = orig - epsilon;
        let down = shifted.data()[i];
        let minus = eval(&shifted)?;
        shifted.data_mut()[i] = orig;

        // divide by the realized (f32-rounded) step, not the nominal one
        let central = ((plus - minus) / (up as f64 - down as f64)) as f32;
        let denom = analytic[i].abs().max(central.abs()).max(1e-8);
        let rel = (analytic[i] - central).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

//! Finite-difference validation of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Compares the tape gradient of `f` at `point` against central finite
/// differences with step `h`, coordinate by coordinate.
///
/// `f` must build a scalar from its input on the supplied tape. Returns the
/// worst relative discrepancy `|analytic - fd| / max(1, |fd|)` over all
/// coordinates. The step must be positive and finite.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64, DiffError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, DiffError>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(DiffError::BadStep(h));
    }

    let analytic = {
        let tape = Tape::new();
        let x = tape.leaf(point.clone())?;
        let out = f(&tape, x)?;
        tape.backward(out)?;
        x.grad()
    };

    let eval = |t: &Tensor| -> Result<f64, DiffError> {
        let tape = Tape::new();
        let x = tape.leaf(t.clone())?;
        let out = f(&tape, x)?;
        out.value().scalar_value()
    };

    let mut worst = 0.0f64;
    for idx in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[idx] += h;
        let mut minus = point.clone();
        minus.data_mut()[idx] -= h;
        let cd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let err = (analytic.data()[idx] - cd).abs() / cd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

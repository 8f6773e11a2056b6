use super::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference estimate of `∇f(params)`.
pub fn central_difference<F>(f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut probe = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite loss while probing coordinate {i}"
            )));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` records a scalar output on a fresh tape from a flat parameter
/// vector and returns it together with the leaves whose concatenated values
/// are that vector, in order. Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)` over all coordinates.
pub fn gradient_check<F>(build: F, params: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[f64]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let (out, leaves) = build(&mut tape, params)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::NumericalFailure(
            "non-finite loss at the base point".into(),
        ));
    }
    tape.backward(out)?;
    let analytic: Vec<f64> = leaves.iter().flat_map(|&v| tape.grad(v).to_vec()).collect();
    if analytic.len() != params.len() {
        return Err(Error::invalid(format!(
            "leaves cover {} values but {} parameters were given",
            analytic.len(),
            params.len()
        )));
    }

    let numeric = central_difference(
        |p| {
            let mut t = Tape::new();
            let (o, _) = build(&mut t, p)?;
            Ok(t.scalar(o))
        },
        params,
        h,
    )?;

    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}

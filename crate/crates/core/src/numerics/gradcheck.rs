//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Worst relative error per named parameter, in the order checked.
    pub per_parameter_errors: Vec<(String, f64)>,
    pub passed: bool,
    pub tolerance: f64,
}

impl GradReport {
    pub fn from_errors(per_parameter_errors: Vec<(String, f64)>, tolerance: f64) -> Self {
        let max_rel_error = per_parameter_errors
            .iter()
            .map(|(_, e)| *e)
            .fold(0.0, f64::max);
        Self {
            max_rel_error,
            passed: max_rel_error < tolerance,
            per_parameter_errors,
            tolerance,
        }
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// A named parameter together with its analytic gradient.
pub struct Checked<'a> {
    pub name: &'a str,
    pub value: &'a Matrix,
    pub analytic: &'a Matrix,
}

/// Perturbs every entry of every parameter by ±`h`, evaluates `f` on the full
/// parameter list, and compares the central difference against the analytic
/// gradient supplied alongside each parameter.
pub fn finite_diff_grad<F>(
    mut f: F,
    params: &[Checked<'_>],
    h: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut values: Vec<Matrix> = params.iter().map(|p| p.value.clone()).collect();
    let mut eval = |values: &[Matrix]| -> Result<f64> {
        let y = f(values);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite(
                "objective evaluated to a non-finite value".into(),
            ))
        }
    };
    eval(&values)?;

    let mut errors = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        if p.analytic.shape() != p.value.shape() {
            return Err(Error::Shape {
                op: "finite_diff_grad",
                left: p.value.shape(),
                right: p.analytic.shape(),
            });
        }
        let mut worst = 0.0f64;
        for k in 0..p.value.as_slice().len() {
            let original = values[pi].as_slice()[k];
            values[pi].as_mut_slice()[k] = original + h;
            let plus = eval(&values)?;
            values[pi].as_mut_slice()[k] = original - h;
            let minus = eval(&values)?;
            values[pi].as_mut_slice()[k] = original;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(p.analytic.as_slice()[k], numeric));
        }
        errors.push((p.name.to_string(), worst));
    }
    Ok(GradReport::from_errors(errors, tolerance))
}

//! Truncated Chebyshev expansion of a spectral graph filter, evaluated in
//! the vertex domain with the three-term recurrence
//! `T_k(L̃)x = 2L̃ T_{k−1}(L̃)x − T_{k−2}(L̃)x`.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct ChebCoeffs {
    coefficients: Vec<f64>,
}

impl ChebCoeffs {
    /// Coefficients `θ_0 … θ_K`; at least one is required.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Config(
                "Chebyshev filter needs at least one coefficient".into(),
            ));
        }
        Ok(Self { coefficients })
    }

    /// Like [`ChebCoeffs::new`] but also checks the length against `order`.
    pub fn with_order(order: usize, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != order + 1 {
            return Err(Error::Config(format!(
                "order {order} needs {} coefficients, got {}",
                order + 1,
                coefficients.len()
            )));
        }
        Self::new(coefficients)
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}

/// `T_k(a)` by the scalar recurrence.
pub fn chebyshev_scalar(k: usize, a: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, a);
    match k {
        0 => prev,
        _ => {
            for _ in 1..k {
                let next = 2.0 * a * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// `L̃ = 2L/λ_max − I`.
pub fn scaled_laplacian(l: &Matrix, lambda_max: f64) -> Result<Matrix> {
    if lambda_max <= 0.0 || !lambda_max.is_finite() {
        return Err(Error::Degenerate(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    let mut out = l.scale(2.0 / lambda_max);
    for i in 0..out.rows().min(out.cols()) {
        out[(i, i)] -= 1.0;
    }
    Ok(out)
}

fn apply(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| dot(m.row(i), x)).collect()
}

/// `Σ_k θ_k T_k(L̃) x`.
pub fn chebyshev_apply(l_scaled: &Matrix, c: &ChebCoeffs, x: &[f64]) -> Result<Vec<f64>> {
    let n = l_scaled.rows();
    if l_scaled.cols() != n || x.len() != n {
        return Err(Error::Shape {
            op: "chebyshev_apply",
            left: l_scaled.shape(),
            right: (x.len(), 1),
        });
    }
    let theta = c.coefficients();
    let mut out: Vec<f64> = x.iter().map(|v| theta[0] * v).collect();
    if theta.len() == 1 {
        return Ok(out);
    }
    let mut prev = x.to_vec();
    let mut cur = apply(l_scaled, x);
    for (o, t) in out.iter_mut().zip(&cur) {
        *o += theta[1] * t;
    }
    for &coef in &theta[2..] {
        let lc = apply(l_scaled, &cur);
        let next: Vec<f64> = lc.iter().zip(&prev).map(|(a, b)| 2.0 * a - b).collect();
        for (o, t) in out.iter_mut().zip(&next) {
            *o += coef * t;
        }
        prev = cur;
        cur = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_zero_is_identity() {
        let l = Matrix::from_rows(&[[0.3, -0.2], [-0.2, 0.1]]);
        let c = ChebCoeffs::new(vec![1.0]).unwrap();
        assert_eq!(
            chebyshev_apply(&l, &c, &[2.0, -1.0]).unwrap(),
            vec![2.0, -1.0]
        );
        assert_eq!(c.order(), 0);
    }

    #[test]
    fn scalar_recurrence() {
        assert_eq!(chebyshev_scalar(2, 0.5), -0.5);
        assert_eq!(chebyshev_scalar(0, 0.7), 1.0);
        assert_eq!(chebyshev_scalar(1, 0.7), 0.7);
        // T_3(cos t) = cos 3t
        let t = 0.4f64;
        assert!((chebyshev_scalar(3, t.cos()) - (3.0 * t).cos()).abs() < 1e-14);
    }

    #[test]
    fn one_by_one_matrix_matches_scalar_polynomials() {
        let a = 0.5;
        let l = Matrix::from_rows(&[[a]]);
        let c = ChebCoeffs::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(chebyshev_apply(&l, &c, &[1.0]).unwrap(), vec![-0.5]);
    }

    #[test]
    fn coefficient_length_must_match_order() {
        assert!(matches!(
            ChebCoeffs::with_order(2, vec![1.0, 2.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(ChebCoeffs::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let c = ChebCoeffs::new(vec![1.0, 1.0]).unwrap();
        assert!(chebyshev_apply(&Matrix::identity(3), &c, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scaled_laplacian_maps_lambda_max_to_one() {
        let l = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]);
        let s = scaled_laplacian(&l, 2.0).unwrap();
        assert_eq!(s, Matrix::from_rows(&[[0.0, -1.0], [-1.0, 0.0]]));
        assert!(scaled_laplacian(&l, 0.0).is_err());
    }
}

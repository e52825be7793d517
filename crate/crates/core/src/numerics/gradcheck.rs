use super::Matrix;
use crate::error::{Result, RsmError};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut f: F, point: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(RsmError::InvalidInput(format!(
            "finite-difference step {h} must be positive"
        )));
    }
    let mut probe = point.clone();
    let mut grad = Matrix::zeros(point.rows(), point.cols());
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(RsmError::NonFinite(format!("objective evaluation at coordinate {i}")));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error `|a-n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softmax_row, Matrix};

    #[test]
    fn sum_of_squares() {
        let x = Matrix::row_vector(&[1.0, 2.0]);
        let g = finite_diff_gradient(|m| Ok(m.data().iter().map(|v| v * v).sum()), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_contraction_matches_analytic_jacobian() {
        // f(z) = c · softmax(z); df/dz_j = w_j (c_j - c·w).
        let c = [0.3, -1.2, 2.0];
        let z = Matrix::row_vector(&[0.1, -0.4, 0.7]);
        let f = |m: &Matrix| -> Result<f64> {
            let w = softmax_row(m.data())?;
            Ok(w.iter().zip(&c).map(|(a, b)| a * b).sum())
        };
        let numeric = finite_diff_gradient(f, &z, DEFAULT_STEP).unwrap();
        let w = softmax_row(z.data()).unwrap();
        let cw: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
        for j in 0..3 {
            let analytic = w[j] * (c[j] - cw);
            assert!((numeric.data()[j] - analytic).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_objective() {
        let x = Matrix::row_vector(&[3.0, -1.0, 0.5]);
        let g = finite_diff_gradient(|_| Ok(4.2), &x, DEFAULT_STEP).unwrap();
        assert!(g.max_abs() < 1e-9);
    }

    #[test]
    fn non_finite_objective_is_error() {
        let x = Matrix::row_vector(&[1.0]);
        assert!(finite_diff_gradient(|_| Ok(f64::NAN), &x, DEFAULT_STEP).is_err());
        assert!(finite_diff_gradient(|_| Ok(1.0), &x, 0.0).is_err());
    }
}

use crate::error::{Result, RsmError};

/// Numerically stable softmax of a single row.
pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(RsmError::InvalidInput("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RsmError::NonFinite("softmax input".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

/// Backward through softmax: given `w = softmax(z)` and `dL/dw`, returns `dL/dz`.
pub fn softmax_backward(w: &[f64], grad_w: &[f64]) -> Vec<f64> {
    let inner: f64 = w.iter().zip(grad_w).map(|(a, b)| a * b).sum();
    w.iter().zip(grad_w).map(|(wi, gi)| wi * (gi - inner)).collect()
}

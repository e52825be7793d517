//! One residual representation layer: single-head cross-attention from a
//! projected speaker query onto a learnable token bank.

use super::params::RrlParams;
use crate::error::Result;
use crate::numerics::{axpy, softmax_backward, softmax_row, Matrix};

/// Values cached by [`rrl_forward_traced`] for the backward pass.
#[derive(Clone, Debug)]
pub struct RrlTrace {
    pub query: Vec<f64>,
    projected: Vec<f64>,
    attn_query: Vec<f64>,
    keys: Matrix,
    values: Matrix,
    pub weights: Vec<f64>,
    mixed: Vec<f64>,
}

/// `e = softmax((q W_down W_q)(C W_k)ᵀ / scale) · (C W_v) · W_o`.
///
/// Returns the layer contribution `e` (length `d_s`) and the attention
/// weights `w` (length `n`).
pub fn rrl_forward(query: &[f64], down: &Matrix, layer: &RrlParams, scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (e, trace) = rrl_forward_traced(query, down, layer, scale)?;
    Ok((e, trace.weights))
}

pub fn rrl_forward_traced(query: &[f64], down: &Matrix, layer: &RrlParams, scale: f64) -> Result<(Vec<f64>, RrlTrace)> {
    let projected = down.vec_mul(query)?;
    let attn_query = layer.w_q.vec_mul(&projected)?;
    let keys = layer.tokens.matmul(&layer.w_k)?;
    let values = layer.tokens.matmul(&layer.w_v)?;
    let logits: Vec<f64> = keys.mul_vec_t(&attn_query)?.into_iter().map(|z| z / scale).collect();
    let weights = softmax_row(&logits)?;
    let mixed = values.vec_mul(&weights)?;
    let e = layer.w_o.vec_mul(&mixed)?;
    Ok((
        e,
        RrlTrace {
            query: query.to_vec(),
            projected,
            attn_query,
            keys,
            values,
            weights,
            mixed,
        },
    ))
}

/// Value path only: `(w · (C W_v)) · W_o` for given weights.
pub fn contribution_from_weights(layer: &RrlParams, weights: &[f64]) -> Result<Vec<f64>> {
    let values = layer.tokens.matmul(&layer.w_v)?;
    layer.w_o.vec_mul(&values.vec_mul(weights)?)
}

/// Backpropagates `dL/de` through one layer, accumulating into `grads` and
/// `grad_down`. Returns `dL/dquery`.
pub fn rrl_backward(
    trace: &RrlTrace,
    grad_e: &[f64],
    down: &Matrix,
    layer: &RrlParams,
    scale: f64,
    grads: &mut RrlParams,
    grad_down: &mut Matrix,
) -> Result<Vec<f64>> {
    // e = u W_o
    grads.w_o.add_outer(&trace.mixed, grad_e);
    let grad_mixed = layer.w_o.mul_vec_t(grad_e)?;

    // u = w V
    let grad_w = trace.values.mul_vec_t(&grad_mixed)?;
    let mut grad_values = Matrix::zeros(trace.values.rows(), trace.values.cols());
    grad_values.add_outer(&trace.weights, &grad_mixed);

    // w = softmax(z), z = a Kᵀ / scale
    let grad_logits: Vec<f64> = softmax_backward(&trace.weights, &grad_w)
        .into_iter()
        .map(|g| g / scale)
        .collect();
    let grad_attn_query = trace.keys.vec_mul(&grad_logits)?;
    let mut grad_keys = Matrix::zeros(trace.keys.rows(), trace.keys.cols());
    grad_keys.add_outer(&grad_logits, &trace.attn_query);

    // K = C W_k, V = C W_v
    grads.w_k.add_scaled(&layer.tokens.matmul_tn(&grad_keys)?, 1.0)?;
    grads.w_v.add_scaled(&layer.tokens.matmul_tn(&grad_values)?, 1.0)?;
    grads.tokens.add_scaled(&grad_keys.matmul_nt(&layer.w_k)?, 1.0)?;
    grads.tokens.add_scaled(&grad_values.matmul_nt(&layer.w_v)?, 1.0)?;

    // a = p W_q
    grads.w_q.add_outer(&trace.projected, &grad_attn_query);
    let grad_projected = layer.w_q.mul_vec_t(&grad_attn_query)?;

    // p = q W_down
    grad_down.add_outer(&trace.query, &grad_projected);
    down.mul_vec_t(&grad_projected)
}

pub(crate) fn sub_assign(a: &mut [f64], b: &[f64]) {
    axpy(-1.0, b, a);
}

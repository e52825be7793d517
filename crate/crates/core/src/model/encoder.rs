//! Frame-wise speaker encoder followed by mean pooling over frames.
//!
//! Each frame is encoded without looking at its neighbours, so the pooled
//! vector depends only on the multiset of frames. Column sums are taken over
//! sorted values, which makes the result bit-identical under any frame order.

use super::config::{EncoderSpec, RsmConfig};
use super::params::EncoderParams;
use crate::error::{Result, RsmError};
use crate::numerics::Matrix;

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    frames: usize,
    patches1: Matrix,
    act1: Matrix,
    patches2: Matrix,
    /// Post-ReLU conv2 output, `T·L2 × c2`; its row-major data is also the
    /// flattened `T × L2·c2` input of the first linear layer.
    act2: Matrix,
    hidden: Matrix,
}

fn relu_inplace(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
}

fn add_bias(m: &mut Matrix, bias: &Matrix) {
    for r in 0..m.rows() {
        m.row_mut(r).iter_mut().zip(bias.data()).for_each(|(v, b)| *v += b);
    }
}

/// Zeroes `grad` wherever the forward ReLU output was not positive.
fn relu_mask(grad: &mut Matrix, act: &Matrix) {
    grad.data_mut().iter_mut().zip(act.data()).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Mean of each column, summing values in sorted order.
fn sorted_column_mean(m: &Matrix) -> Vec<f64> {
    let mut col = Vec::with_capacity(m.rows());
    (0..m.cols())
        .map(|c| {
            col.clear();
            col.extend((0..m.rows()).map(|r| m.get(r, c)));
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / m.rows() as f64
        })
        .collect()
}

fn im2col_input(x: &Matrix, spec: &EncoderSpec) -> Matrix {
    let (k, s, l1) = (spec.kernel, spec.stride, spec.conv1_len());
    let mut out = Matrix::zeros(x.rows() * l1, k);
    for t in 0..x.rows() {
        let frame = x.row(t);
        for j in 0..l1 {
            out.row_mut(t * l1 + j).copy_from_slice(&frame[j * s..j * s + k]);
        }
    }
    out
}

fn im2col_hidden(act1: &Matrix, frames: usize, spec: &EncoderSpec) -> Matrix {
    let (k, s, c1) = (spec.kernel, spec.stride, spec.channels[0]);
    let (l1, l2) = (spec.conv1_len(), spec.conv2_len());
    let mut out = Matrix::zeros(frames * l2, k * c1);
    for t in 0..frames {
        for j in 0..l2 {
            let row = out.row_mut(t * l2 + j);
            for tap in 0..k {
                row[tap * c1..(tap + 1) * c1].copy_from_slice(act1.row(t * l1 + j * s + tap));
            }
        }
    }
    out
}

pub(crate) fn check_mel_width(frames: &Matrix, cfg: &RsmConfig) -> Result<()> {
    if frames.cols() != cfg.encoder.mel_bins {
        return Err(RsmError::Shape(format!(
            "mel has {} bins, model expects {}",
            frames.cols(),
            cfg.encoder.mel_bins
        )));
    }
    if frames.rows() == 0 {
        return Err(RsmError::Shape("mel has no frames".into()));
    }
    Ok(())
}

/// Encodes every frame and returns the `T × d_s` per-frame outputs.
pub fn encode_frames(frames: &Matrix, params: &EncoderParams, cfg: &RsmConfig) -> Result<(Matrix, EncoderTrace)> {
    check_mel_width(frames, cfg)?;
    let spec = &cfg.encoder;
    let t = frames.rows();

    let patches1 = im2col_input(frames, spec);
    let mut act1 = patches1.matmul(&params.conv1_w)?;
    add_bias(&mut act1, &params.conv1_b);
    relu_inplace(&mut act1);

    let patches2 = im2col_hidden(&act1, t, spec);
    let mut act2 = patches2.matmul(&params.conv2_w)?;
    add_bias(&mut act2, &params.conv2_b);
    relu_inplace(&mut act2);

    let flat = Matrix::from_vec(t, spec.flat_len(), act2.data().to_vec())?;
    let mut hidden = flat.matmul(&params.lin1_w)?;
    add_bias(&mut hidden, &params.lin1_b);
    relu_inplace(&mut hidden);

    let mut out = hidden.matmul(&params.lin2_w)?;
    add_bias(&mut out, &params.lin2_b);

    let trace = EncoderTrace {
        frames: t,
        patches1,
        act1,
        patches2,
        act2,
        hidden,
    };
    Ok((out, trace))
}

/// `S = (1/T) Σ_t f(x_t)`.
pub fn speaker_vector(frames: &Matrix, params: &EncoderParams, cfg: &RsmConfig) -> Result<(Vec<f64>, EncoderTrace)> {
    let (per_frame, trace) = encode_frames(frames, params, cfg)?;
    Ok((sorted_column_mean(&per_frame), trace))
}

/// Accumulates encoder gradients given `dL/dS`.
pub fn encoder_backward(
    trace: &EncoderTrace,
    grad_s: &[f64],
    params: &EncoderParams,
    cfg: &RsmConfig,
    grads: &mut EncoderParams,
) -> Result<()> {
    let spec = &cfg.encoder;
    let t = trace.frames;
    let inv_t = 1.0 / t as f64;
    let per_frame: Vec<f64> = grad_s.iter().map(|g| g * inv_t).collect();

    // linear2: every frame receives the same upstream gradient.
    let hidden_sum = trace.hidden.column_sums();
    grads.lin2_w.add_outer(&hidden_sum, &per_frame);
    grads
        .lin2_b
        .data_mut()
        .iter_mut()
        .zip(grad_s)
        .for_each(|(b, g)| *b += g);
    let grad_hidden_row = params.lin2_w.mul_vec_t(&per_frame)?;

    let h = trace.hidden.cols();
    let mut grad_hidden = Matrix::zeros(t, h);
    for r in 0..t {
        grad_hidden.row_mut(r).copy_from_slice(&grad_hidden_row);
    }
    relu_mask(&mut grad_hidden, &trace.hidden);

    // linear1
    let flat = Matrix::from_vec(t, spec.flat_len(), trace.act2.data().to_vec())?;
    grads.lin1_w.add_scaled(&flat.matmul_tn(&grad_hidden)?, 1.0)?;
    add_row_sums(&mut grads.lin1_b, &grad_hidden);
    let grad_flat = grad_hidden.matmul_nt(&params.lin1_w)?;

    // conv2
    let mut grad_act2 = Matrix::from_vec(trace.act2.rows(), trace.act2.cols(), grad_flat.into_vec())?;
    relu_mask(&mut grad_act2, &trace.act2);
    grads.conv2_w.add_scaled(&trace.patches2.matmul_tn(&grad_act2)?, 1.0)?;
    add_row_sums(&mut grads.conv2_b, &grad_act2);
    let grad_patches2 = grad_act2.matmul_nt(&params.conv2_w)?;

    // col2im back onto conv1's output grid
    let (k, s, c1) = (spec.kernel, spec.stride, spec.channels[0]);
    let (l1, l2) = (spec.conv1_len(), spec.conv2_len());
    let mut grad_act1 = Matrix::zeros(trace.act1.rows(), trace.act1.cols());
    for f in 0..t {
        for j in 0..l2 {
            let src = grad_patches2.row(f * l2 + j);
            for tap in 0..k {
                let dst = grad_act1.row_mut(f * l1 + j * s + tap);
                dst.iter_mut()
                    .zip(&src[tap * c1..(tap + 1) * c1])
                    .for_each(|(d, g)| *d += g);
            }
        }
    }
    relu_mask(&mut grad_act1, &trace.act1);

    // conv1
    grads.conv1_w.add_scaled(&trace.patches1.matmul_tn(&grad_act1)?, 1.0)?;
    add_row_sums(&mut grads.conv1_b, &grad_act1);
    Ok(())
}

fn add_row_sums(bias_grad: &mut Matrix, grad: &Matrix) {
    let sums = grad.column_sums();
    bias_grad.data_mut().iter_mut().zip(sums).for_each(|(b, s)| *b += s);
}

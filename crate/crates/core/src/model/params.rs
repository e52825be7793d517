use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{InitScheme, RsmConfig};
use crate::error::{Result, RsmError};
use crate::numerics::Matrix;

/// Frame-encoder weights. Convolution kernels are stored im2col-style:
/// rows index `(tap, in_channel)`, columns index the output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub conv1_w: Matrix,
    pub conv1_b: Matrix,
    pub conv2_w: Matrix,
    pub conv2_b: Matrix,
    pub lin1_w: Matrix,
    pub lin1_b: Matrix,
    pub lin2_w: Matrix,
    pub lin2_b: Matrix,
}

/// One residual representation layer: a token bank and its projections.
#[derive(Clone, Debug, PartialEq)]
pub struct RrlParams {
    /// `n × d_s/α`, the keys and values before projection.
    pub tokens: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// `d_s/α × d_s`.
    pub w_o: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsmParams {
    pub encoder: EncoderParams,
    /// Shared `d_s × d_s/α` projection applied to every layer's query.
    pub down: Matrix,
    pub layers: Vec<RrlParams>,
}

/// `(name, rows, cols, fan_in)` for every tensor, in canonical order.
pub fn parameter_layout(cfg: &RsmConfig) -> Vec<(String, usize, usize, usize)> {
    let enc = &cfg.encoder;
    let [c1, c2] = enc.channels;
    let k = enc.kernel;
    let (d, r, n, h) = (cfg.d_s, cfg.token_dim(), cfg.n_tokens, cfg.hidden());
    let mut out = vec![
        ("encoder.conv1.weight".to_string(), k, c1, k),
        ("encoder.conv1.bias".to_string(), 1, c1, k),
        ("encoder.conv2.weight".to_string(), k * c1, c2, k * c1),
        ("encoder.conv2.bias".to_string(), 1, c2, k * c1),
        ("encoder.linear1.weight".to_string(), enc.flat_len(), h, enc.flat_len()),
        ("encoder.linear1.bias".to_string(), 1, h, enc.flat_len()),
        ("encoder.linear2.weight".to_string(), h, d, h),
        ("encoder.linear2.bias".to_string(), 1, d, h),
        ("down_proj".to_string(), d, r, d),
    ];
    for i in 0..cfg.n_layers {
        out.push((format!("layers.{i}.tokens"), n, r, r));
        out.push((format!("layers.{i}.w_q"), r, r, r));
        out.push((format!("layers.{i}.w_k"), r, r, r));
        out.push((format!("layers.{i}.w_v"), r, r, r));
        out.push((format!("layers.{i}.w_o"), r, d, r));
    }
    out
}

impl RsmParams {
    pub fn zeros(cfg: &RsmConfig) -> Self {
        let mats = parameter_layout(cfg)
            .into_iter()
            .map(|(_, r, c, _)| Matrix::zeros(r, c))
            .collect();
        Self::from_tensors(cfg, mats).expect("layout is self-consistent")
    }

    pub fn init(cfg: &RsmConfig, rng: &mut ChaCha8Rng) -> Self {
        let mats = parameter_layout(cfg)
            .into_iter()
            .map(|(_, r, c, fan_in)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = match cfg.init {
                    InitScheme::Uniform { gain } => {
                        let b = gain * bound;
                        (0..r * c).map(|_| rng.random_range(-b..=b)).collect()
                    }
                    InitScheme::Normal { gain } => {
                        let dist = Normal::new(0.0, gain * bound).expect("positive std");
                        (0..r * c).map(|_| dist.sample(rng)).collect()
                    }
                };
                Matrix::from_vec(r, c, data).expect("sized")
            })
            .collect();
        Self::from_tensors(cfg, mats).expect("layout is self-consistent")
    }

    /// Rebuilds the structure from tensors in [`parameter_layout`] order.
    pub fn from_tensors(cfg: &RsmConfig, tensors: Vec<Matrix>) -> Result<Self> {
        let layout = parameter_layout(cfg);
        if tensors.len() != layout.len() {
            return Err(RsmError::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, r, c, _), m) in layout.iter().zip(&tensors) {
            if m.shape() != (*r, *c) {
                return Err(RsmError::Shape(format!(
                    "parameter `{name}` should be {r}x{c}, got {:?}",
                    m.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let encoder = EncoderParams {
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            lin1_w: next(),
            lin1_b: next(),
            lin2_w: next(),
            lin2_b: next(),
        };
        let down = next();
        let layers = (0..cfg.n_layers)
            .map(|_| RrlParams {
                tokens: next(),
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_o: next(),
            })
            .collect();
        Ok(RsmParams { encoder, down, layers })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let e = &self.encoder;
        let mut out = vec![
            &e.conv1_w, &e.conv1_b, &e.conv2_w, &e.conv2_b, &e.lin1_w, &e.lin1_b, &e.lin2_w, &e.lin2_b, &self.down,
        ];
        for l in &self.layers {
            out.extend([&l.tokens, &l.w_q, &l.w_k, &l.w_v, &l.w_o]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let e = &mut self.encoder;
        let mut out = vec![
            &mut e.conv1_w,
            &mut e.conv1_b,
            &mut e.conv2_w,
            &mut e.conv2_b,
            &mut e.lin1_w,
            &mut e.lin1_b,
            &mut e.lin2_w,
            &mut e.lin2_b,
            &mut self.down,
        ];
        for l in &mut self.layers {
            out.extend([&mut l.tokens, &mut l.w_q, &mut l.w_k, &mut l.w_v, &mut l.w_o]);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &RsmParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors_mut().into_iter().for_each(|m| m.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ResidualMode, RsmConfig};
use super::encoder::{encoder_backward, speaker_vector, EncoderTrace};
use super::params::RsmParams;
use super::rrl::{rrl_backward, rrl_forward_traced, sub_assign, RrlTrace};
use crate::error::{Result, RsmError};
use crate::features::MelSpectrogram;
use crate::numerics::{axpy, Matrix};

/// What one layer did during a forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerOutput {
    /// The query this layer attended with.
    pub query: Vec<f64>,
    /// `e_i`, the layer's additive contribution to the embedding.
    pub contribution: Vec<f64>,
    /// Attention weights over the layer's tokens.
    pub weights: Vec<f64>,
    /// The query handed to the next layer.
    pub query_residual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsmOutput {
    /// Pooled speaker vector `S`.
    pub speaker: Vec<f64>,
    /// Final embedding `E`.
    pub embedding: Vec<f64>,
    pub layers: Vec<LayerOutput>,
}

impl RsmOutput {
    pub fn final_residual(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").query_residual
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RsmModel {
    pub config: RsmConfig,
    pub params: RsmParams,
}

struct Trace {
    encoder: Option<EncoderTrace>,
    layers: Vec<RrlTrace>,
    mode: ResidualMode,
}

/// Records one forward pass so gradients can be taken afterwards.
#[derive(Default)]
pub struct Tape {
    trace: Option<Trace>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }
}

impl RsmModel {
    pub fn new(config: RsmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = RsmParams::init(&config, &mut rng);
        Ok(RsmModel { config, params })
    }

    pub fn from_params(config: RsmConfig, params: RsmParams) -> Result<Self> {
        config.validate()?;
        let rebuilt = RsmParams::from_tensors(&config, params.tensors().into_iter().cloned().collect())?;
        Ok(RsmModel {
            config,
            params: rebuilt,
        })
    }

    /// Pooled speaker vector `S` for a mel-spectrogram.
    pub fn speaker_vector(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        Ok(speaker_vector(&mel.frames, &self.params.encoder, &self.config)?.0)
    }

    pub fn forward(&self, mel: &MelSpectrogram) -> Result<RsmOutput> {
        self.forward_frames(&mel.frames, None)
    }

    pub fn forward_frames(&self, frames: &Matrix, tape: Option<&mut Tape>) -> Result<RsmOutput> {
        let (s, enc_trace) = speaker_vector(frames, &self.params.encoder, &self.config)?;
        let (out, layers) = self.forward_layers(&s)?;
        if let Some(tape) = tape {
            tape.trace = Some(Trace {
                encoder: Some(enc_trace),
                layers,
                mode: self.config.residual_mode,
            });
        }
        Ok(out)
    }

    pub fn forward_taped(&self, mel: &MelSpectrogram, tape: &mut Tape) -> Result<RsmOutput> {
        self.forward_frames(&mel.frames, Some(tape))
    }

    /// Runs the layer stack on a given speaker vector, bypassing the encoder.
    pub fn forward_from_speaker(&self, s: &[f64], tape: Option<&mut Tape>) -> Result<RsmOutput> {
        let (out, layers) = self.forward_layers(s)?;
        if let Some(tape) = tape {
            tape.trace = Some(Trace {
                encoder: None,
                layers,
                mode: self.config.residual_mode,
            });
        }
        Ok(out)
    }

    fn forward_layers(&self, s: &[f64]) -> Result<(RsmOutput, Vec<RrlTrace>)> {
        let d = self.config.d_s;
        if s.len() != d {
            return Err(RsmError::Shape(format!(
                "speaker vector has length {}, expected {d}",
                s.len()
            )));
        }
        let scale = self.config.scale();
        let down = &self.params.down;
        let mut embedding = vec![0.0; d];
        let mut query = s.to_vec();
        let mut outputs = Vec::with_capacity(self.config.n_layers);
        let mut traces = Vec::with_capacity(self.config.n_layers);
        for layer in &self.params.layers {
            let (e, trace) = rrl_forward_traced(&query, down, layer, scale)?;
            axpy(1.0, &e, &mut embedding);
            let next = match self.config.residual_mode {
                ResidualMode::PerLayer => {
                    let mut q = query.clone();
                    sub_assign(&mut q, &e);
                    q
                }
                ResidualMode::VerbatimAlgorithm => {
                    let mut q = query.clone();
                    sub_assign(&mut q, &embedding);
                    q
                }
                ResidualMode::None => s.to_vec(),
            };
            outputs.push(LayerOutput {
                query: std::mem::replace(&mut query, next.clone()),
                contribution: e,
                weights: trace.weights.clone(),
                query_residual: next,
            });
            traces.push(trace);
        }
        let out = RsmOutput {
            speaker: s.to_vec(),
            embedding,
            layers: outputs,
        };
        Ok((out, traces))
    }

    /// Parameter gradients for the pass recorded on `tape`, given `dL/dE`.
    pub fn backward(&self, tape: &Tape, grad_embedding: &[f64]) -> Result<RsmParams> {
        let mut grads = RsmParams::zeros(&self.config);
        self.backward_into(tape, grad_embedding, &mut grads)?;
        Ok(grads)
    }

    /// Like [`RsmModel::backward`] but accumulates into `grads`; returns `dL/dS`.
    pub fn backward_into(&self, tape: &Tape, grad_embedding: &[f64], grads: &mut RsmParams) -> Result<Vec<f64>> {
        let trace = tape
            .trace
            .as_ref()
            .ok_or_else(|| RsmError::State("backward called before a recorded forward pass".into()))?;
        let d = self.config.d_s;
        if grad_embedding.len() != d {
            return Err(RsmError::Shape(format!(
                "embedding gradient has length {}, expected {d}",
                grad_embedding.len()
            )));
        }
        if trace.mode != self.config.residual_mode || trace.layers.len() != self.config.n_layers {
            return Err(RsmError::State(
                "tape was recorded with a different configuration".into(),
            ));
        }
        let scale = self.config.scale();
        let down = &self.params.down;
        let k = self.config.n_layers;
        let back = |i: usize, g: &[f64], grads: &mut RsmParams| -> Result<Vec<f64>> {
            let RsmParams {
                down: gd, layers: gl, ..
            } = grads;
            rrl_backward(&trace.layers[i], g, down, &self.params.layers[i], scale, &mut gl[i], gd)
        };

        let grad_s = match trace.mode {
            ResidualMode::PerLayer => {
                // q_{i+1} = q_i - e_i, E = Σ e_i
                let mut grad_next = vec![0.0; d];
                for i in (0..k).rev() {
                    let mut grad_e = grad_embedding.to_vec();
                    sub_assign(&mut grad_e, &grad_next);
                    let grad_q = back(i, &grad_e, grads)?;
                    axpy(1.0, &grad_q, &mut grad_next);
                }
                grad_next
            }
            ResidualMode::VerbatimAlgorithm => {
                // E_i = A_i(S_i) + E_{i-1}, S_{i+1} = S_i - E_i
                let mut grad_acc = grad_embedding.to_vec();
                let mut grad_next = vec![0.0; d];
                for i in (0..k).rev() {
                    sub_assign(&mut grad_acc, &grad_next);
                    let grad_q = back(i, &grad_acc, grads)?;
                    axpy(1.0, &grad_q, &mut grad_next);
                }
                grad_next
            }
            ResidualMode::None => {
                let mut grad_s = vec![0.0; d];
                for i in 0..k {
                    let grad_q = back(i, grad_embedding, grads)?;
                    axpy(1.0, &grad_q, &mut grad_s);
                }
                grad_s
            }
        };

        if let Some(enc) = &trace.encoder {
            encoder_backward(enc, &grad_s, &self.params.encoder, &self.config, &mut grads.encoder)?;
        }
        Ok(grad_s)
    }
}

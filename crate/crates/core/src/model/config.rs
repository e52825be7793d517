use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmError};

/// How each layer's query is formed from the previous layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `q_{i+1} = q_i - e_i`; each layer explains what the previous one left over.
    #[default]
    PerLayer,
    /// `E ← A_i(S, C_i) + E; S ← S - E`, subtracting the running sum.
    VerbatimAlgorithm,
    /// Ablation: every layer attends with the original speaker vector.
    None,
}

impl ResidualMode {
    pub const ALL: [ResidualMode; 3] = [
        ResidualMode::PerLayer,
        ResidualMode::VerbatimAlgorithm,
        ResidualMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::PerLayer => "per_layer",
            ResidualMode::VerbatimAlgorithm => "verbatim_algorithm",
            ResidualMode::None => "none",
        }
    }

    /// System label used in comparison tables.
    pub fn system_id(self) -> &'static str {
        match self {
            ResidualMode::PerLayer => "P01",
            ResidualMode::VerbatimAlgorithm => "P01-alg",
            ResidualMode::None => "P02",
        }
    }
}

impl std::fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// Divide logits by `sqrt(d_s)`.
    #[default]
    SqrtDs,
    /// Divide logits by `sqrt(d_s / alpha)`, the actual inner dimension.
    SqrtDsOverAlpha,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitScheme {
    /// `U(-gain/sqrt(fan_in), gain/sqrt(fan_in))`.
    Uniform { gain: f64 },
    /// `N(0, (gain/sqrt(fan_in))²)`.
    Normal { gain: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Uniform { gain: 1.0 }
    }
}

/// Frame encoder: two strided 1-D convolutions over the mel axis of a single
/// frame, then two linear layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub mel_bins: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    /// Width of the hidden linear layer; `0` means `d_s`.
    pub hidden: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            mel_bins: 80,
            channels: [16, 32],
            kernel: 5,
            stride: 2,
            hidden: 0,
        }
    }
}

impl EncoderSpec {
    pub fn conv1_len(&self) -> usize {
        conv_out(self.mel_bins, self.kernel, self.stride)
    }

    pub fn conv2_len(&self) -> usize {
        conv_out(self.conv1_len(), self.kernel, self.stride)
    }

    pub fn flat_len(&self) -> usize {
        self.conv2_len() * self.channels[1]
    }
}

fn conv_out(len: usize, kernel: usize, stride: usize) -> usize {
    if len < kernel {
        0
    } else {
        (len - kernel) / stride + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RsmConfig {
    /// Speaker vector dimension.
    pub d_s: usize,
    /// Bottleneck divisor: tokens live in `d_s / alpha` dimensions.
    pub alpha: usize,
    pub n_tokens: usize,
    pub n_layers: usize,
    pub residual_mode: ResidualMode,
    pub attention_scale: AttentionScale,
    pub encoder: EncoderSpec,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for RsmConfig {
    fn default() -> Self {
        RsmConfig {
            d_s: 256,
            alpha: 4,
            n_tokens: 32,
            n_layers: 4,
            residual_mode: ResidualMode::PerLayer,
            attention_scale: AttentionScale::SqrtDs,
            encoder: EncoderSpec::default(),
            init: InitScheme::default(),
            seed: 1234,
        }
    }
}

impl RsmConfig {
    /// The small shape used for CPU training runs.
    pub fn desk() -> Self {
        RsmConfig {
            d_s: 64,
            alpha: 4,
            n_tokens: 16,
            n_layers: 4,
            ..Default::default()
        }
    }

    pub fn token_dim(&self) -> usize {
        self.d_s / self.alpha
    }

    pub fn hidden(&self) -> usize {
        if self.encoder.hidden == 0 {
            self.d_s
        } else {
            self.encoder.hidden
        }
    }

    pub fn scale(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::SqrtDs => (self.d_s as f64).sqrt(),
            AttentionScale::SqrtDsOverAlpha => (self.token_dim() as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 {
            return Err(RsmError::config("model.d_s", "must be positive"));
        }
        if self.alpha == 0 || !self.d_s.is_multiple_of(self.alpha) {
            return Err(RsmError::config(
                "model.alpha",
                format!("d_s = {} must be divisible by alpha = {}", self.d_s, self.alpha),
            ));
        }
        if self.n_layers == 0 {
            return Err(RsmError::config("model.n_layers", "need at least one layer"));
        }
        if self.n_tokens == 0 {
            return Err(RsmError::config("model.n_tokens", "need at least one token"));
        }
        let enc = &self.encoder;
        if enc.kernel == 0 || enc.stride == 0 || enc.channels.contains(&0) {
            return Err(RsmError::config(
                "model.encoder",
                "kernel, stride and channels must be positive",
            ));
        }
        if enc.conv2_len() == 0 {
            return Err(RsmError::config(
                "model.encoder.mel_bins",
                format!(
                    "{} mel bins too few for two convolutions of kernel {}",
                    enc.mel_bins, enc.kernel
                ),
            ));
        }
        match self.init {
            InitScheme::Uniform { gain } | InitScheme::Normal { gain } if !(gain > 0.0) => {
                Err(RsmError::config("model.init.gain", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

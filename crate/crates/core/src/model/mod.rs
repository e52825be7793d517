//! The speaker encoder, residual representation layers and the full
//! residual speaker module.

mod checkpoint;
mod config;
mod encoder;
mod params;
mod rrl;
mod rsm;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry, RSMC_MAGIC, RSMC_VERSION};
pub use config::{AttentionScale, EncoderSpec, InitScheme, ResidualMode, RsmConfig};
pub use encoder::{encode_frames, speaker_vector};
pub use params::{parameter_layout, EncoderParams, RrlParams, RsmParams};
pub use rrl::{contribution_from_weights, rrl_forward};
pub use rsm::{LayerOutput, RsmModel, RsmOutput, Tape};

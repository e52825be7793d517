//! "RSMC" checkpoints: a JSON manifest line followed by every parameter as
//! little-endian `f64`, concatenated in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RsmConfig;
use super::params::{parameter_layout, RsmParams};
use super::rsm::RsmModel;
use crate::error::{Result, RsmError};
use crate::features::MelConfig;
use crate::numerics::Matrix;

pub const RSMC_MAGIC: &str = "RSMC";
pub const RSMC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: RsmConfig,
    pub mel: MelConfig,
    pub seed: u64,
    pub step: u64,
    pub parameters: Vec<TensorEntry>,
}

/// An inference model plus the feature configuration it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: RsmModel,
    pub mel: MelConfig,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: RSMC_MAGIC.into(),
            version: RSMC_VERSION,
            config: self.model.config.clone(),
            mel: self.mel.clone(),
            seed: self.seed,
            step: self.step,
            parameters: parameter_layout(&self.model.config)
                .into_iter()
                .map(|(name, r, c, _)| TensorEntry { name, shape: [r, c] })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.manifest())?;
        out.push(b'\n');
        for m in self.model.params.tensors() {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| RsmError::Format("RSMC: missing manifest line".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| RsmError::Format(format!("RSMC manifest: {e}")))?;
        if manifest.format != RSMC_MAGIC || manifest.version != RSMC_VERSION {
            return Err(RsmError::Format(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        manifest.config.validate()?;
        let expected = parameter_layout(&manifest.config);
        if expected.len() != manifest.parameters.len()
            || expected
                .iter()
                .zip(&manifest.parameters)
                .any(|((n, r, c, _), e)| n != &e.name || [*r, *c] != e.shape)
        {
            return Err(RsmError::Format("RSMC parameter list does not match its config".into()));
        }
        let mut blob = &bytes[nl + 1..];
        let total: usize = manifest.parameters.iter().map(|e| e.shape[0] * e.shape[1]).sum();
        if blob.len() != total * 8 {
            return Err(RsmError::Format(format!(
                "RSMC payload has {} bytes, manifest implies {}",
                blob.len(),
                total * 8
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.parameters.len());
        for e in &manifest.parameters {
            let n = e.shape[0] * e.shape[1];
            let (head, rest) = blob.split_at(n * 8);
            let data = head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Matrix::from_vec(e.shape[0], e.shape[1], data)?);
            blob = rest;
        }
        let params = RsmParams::from_tensors(&manifest.config, tensors)?;
        Ok(Checkpoint {
            model: RsmModel {
                config: manifest.config,
                params,
            },
            mel: manifest.mel,
            seed: manifest.seed,
            step: manifest.step,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| RsmError::file(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::atomic_write(path, &self.to_bytes()?)
    }

    /// Errors unless features were produced with this checkpoint's front end.
    pub fn check_features(&self, mel: &crate::features::MelSpectrogram) -> Result<()> {
        if mel.config != self.mel {
            return Err(RsmError::Validation(format!(
                "feature config does not match checkpoint (features: {} bins, fmax {}; checkpoint: {} bins, fmax {})",
                mel.config.mel_bins, mel.config.fmax, self.mel.mel_bins, self.mel.fmax
            )));
        }
        if mel.num_bins() != self.model.config.encoder.mel_bins {
            return Err(RsmError::Validation(format!(
                "features have {} mel bins, model expects {}",
                mel.num_bins(),
                self.model.config.encoder.mel_bins
            )));
        }
        Ok(())
    }
}

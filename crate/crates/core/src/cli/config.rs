//! JSON configuration files accepted by the commands. Unknown keys are
//! rejected and errors carry the offending field path.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmError};
use crate::features::{MelConfig, Normalization};
use crate::model::RsmConfig;
use crate::training::TrainConfig;

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RsmError::config(path.display().to_string(), e.to_string()))?;
    parse_json(&text)
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        RsmError::config(if path == "." { "$".to_string() } else { path }, e.inner().to_string())
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    pub normalization: Normalization,
}

/// Everything `train` needs. `corpus` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub corpus: PathBuf,
    #[serde(default = "RsmConfig::desk")]
    pub model: RsmConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mel: MelConfig,
    #[serde(default)]
    pub normalization: Normalization,
}

impl TrainFile {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.mel.validate()?;
        if self.model.encoder.mel_bins != self.mel.mel_bins {
            return Err(RsmError::config(
                "model.encoder.mel_bins",
                format!("must equal mel.mel_bins = {}", self.mel.mel_bins),
            ));
        }
        if !self.corpus.join(crate::training::CORPUS_INDEX).is_file() {
            return Err(RsmError::config(
                "corpus",
                format!("no corpus found at {}", self.corpus.display()),
            ));
        }
        Ok(())
    }
}

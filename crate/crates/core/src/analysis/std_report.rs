use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RsmError};
use crate::features::MelSpectrogram;
use crate::model::{Checkpoint, ResidualMode, RsmConfig, RsmModel};

pub const STD_DEFINITION: &str = "for each layer i: contribution e_i over all utterances; \
population std (ddof 0) over utterances per dimension; mean over the d_s dimensions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdRow {
    pub system: String,
    pub residual_mode: ResidualMode,
    pub config: RsmConfig,
    /// One entry per layer.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdReport {
    pub definition: String,
    pub corpus_fingerprint: String,
    pub num_utterances: usize,
    pub rows: Vec<StdRow>,
}

/// Mean over dimensions of the across-utterance std of each layer's contribution.
pub fn layer_std(model: &RsmModel, mels: &[MelSpectrogram]) -> Result<Vec<f64>> {
    if mels.len() < 2 {
        return Err(RsmError::InvalidInput(format!(
            "std analysis needs at least 2 utterances, got {}",
            mels.len()
        )));
    }
    let (k, d) = (model.config.n_layers, model.config.d_s);
    let n = mels.len() as f64;
    let outputs = mels.iter().map(|m| model.forward(m)).collect::<Result<Vec<_>>>()?;
    // Shifted by the first utterance so identical inputs give exactly zero.
    let shift = &outputs[0].layers;
    let dev = |o: &crate::model::RsmOutput, i: usize, j: usize| o.layers[i].contribution[j] - shift[i].contribution[j];
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..d {
            let mean = outputs.iter().map(|o| dev(o, i, j)).sum::<f64>() / n;
            let var = outputs.iter().map(|o| (dev(o, i, j) - mean).powi(2)).sum::<f64>() / n;
            acc += var.sqrt();
        }
        out.push(acc / d as f64);
    }
    Ok(out)
}

/// SHA-256 over frame counts and values.
pub fn mel_fingerprint(mels: &[MelSpectrogram]) -> String {
    let mut h = Sha256::new();
    for m in mels {
        h.update((m.num_frames() as u64).to_le_bytes());
        h.update((m.num_bins() as u64).to_le_bytes());
        for v in m.frames.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// One row per checkpoint, all evaluated on the same utterances.
pub fn std_report(
    systems: &[&Checkpoint],
    mels: &[MelSpectrogram],
    corpus_fingerprint: impl Into<String>,
) -> Result<StdReport> {
    let rows = systems
        .iter()
        .map(|ck| {
            for m in mels {
                ck.check_features(m)?;
            }
            let mode = ck.model.config.residual_mode;
            Ok(StdRow {
                system: mode.system_id().to_string(),
                residual_mode: mode,
                config: ck.model.config.clone(),
                values: layer_std(&ck.model, mels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StdReport {
        definition: STD_DEFINITION.to_string(),
        corpus_fingerprint: corpus_fingerprint.into(),
        num_utterances: mels.len(),
        rows,
    })
}

impl StdReport {
    /// Markdown table: one row per system, columns `Layer 1..K`.
    pub fn to_table(&self) -> String {
        let k = self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
        let mut out = format!(
            "# {}\n# corpus {} ({} utterances)\n",
            self.definition, self.corpus_fingerprint, self.num_utterances
        );
        out.push_str("| System |");
        for i in 1..=k {
            out.push_str(&format!(" Layer {i} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(k));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("| {} |", r.system));
            for v in &r.values {
                out.push_str(&format!(" {v:.4} |"));
            }
            out.push('\n');
        }
        out
    }
}

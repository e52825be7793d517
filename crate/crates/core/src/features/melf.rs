//! "MELF" feature container: one JSON header line, then `rows × cols`
//! little-endian `f32` values in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mel::{MelConfig, MelSpectrogram};
use crate::error::{Result, RsmError};
use crate::numerics::Matrix;

pub const MELF_MAGIC: &str = "MELF";
pub const MELF_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelfHeader {
    pub format: String,
    pub version: u32,
    /// What the payload holds: `mel`, `weights` or `embedding`.
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<MelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl MelfHeader {
    pub fn new(kind: &str, rows: usize, cols: usize) -> Self {
        MelfHeader {
            format: MELF_MAGIC.into(),
            version: MELF_VERSION,
            kind: kind.into(),
            rows,
            cols,
            sample_rate: None,
            config: None,
            meta: None,
        }
    }
}

pub fn encode_container(header: &MelfHeader, data: &Matrix) -> Result<Vec<u8>> {
    if data.shape() != (header.rows, header.cols) {
        return Err(RsmError::Shape(format!(
            "header says {}x{}, payload is {:?}",
            header.rows,
            header.cols,
            data.shape()
        )));
    }
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.reserve(data.len() * 4);
    for &v in data.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<(MelfHeader, Matrix)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| RsmError::Format("MELF: missing header line".into()))?;
    let header: MelfHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| RsmError::Format(format!("MELF header: {e}")))?;
    if header.format != MELF_MAGIC {
        return Err(RsmError::Format(format!(
            "not a MELF file (format `{}`)",
            header.format
        )));
    }
    if header.version != MELF_VERSION {
        return Err(RsmError::Format(format!("unsupported MELF version {}", header.version)));
    }
    let payload = &bytes[newline + 1..];
    let expected = header.rows * header.cols * 4;
    if payload.len() != expected {
        return Err(RsmError::Format(format!(
            "MELF payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let m = Matrix::from_vec(header.rows, header.cols, data)?;
    Ok((header, m))
}

pub fn encode_melf(mel: &MelSpectrogram) -> Result<Vec<u8>> {
    let mut header = MelfHeader::new("mel", mel.num_frames(), mel.num_bins());
    header.sample_rate = Some(mel.config.sample_rate);
    header.config = Some(mel.config.clone());
    encode_container(&header, &mel.frames)
}

pub fn decode_melf(bytes: &[u8]) -> Result<MelSpectrogram> {
    let (header, frames) = decode_container(bytes)?;
    if header.kind != "mel" {
        return Err(RsmError::Format(format!(
            "MELF holds `{}`, expected `mel`",
            header.kind
        )));
    }
    let config = header
        .config
        .ok_or_else(|| RsmError::Format("MELF mel file lacks its config".into()))?;
    if frames.cols() != config.mel_bins {
        return Err(RsmError::Format(format!(
            "MELF has {} columns but config says {} mel bins",
            frames.cols(),
            config.mel_bins
        )));
    }
    Ok(MelSpectrogram { frames, config })
}

pub fn read_melf(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| RsmError::file(path, e))?;
    decode_melf(&bytes).map_err(|e| match e {
        RsmError::Format(m) => RsmError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

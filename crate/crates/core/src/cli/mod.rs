//! The `rsm` command line. Exit codes: 0 success, 1 runtime or data error,
//! 2 configuration or schema error.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::RsmError;
use crate::features::Normalization;

#[derive(Debug, Parser)]
#[command(
    name = "rsm",
    version,
    about = "Residual speaker module: embeddings, token weights and timbre editing"
)]
pub struct Cli {
    /// Overrides the seed(s) in the command's configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write MELF log-mel features for a WAV file or every WAV in a directory.
    Extract {
        input: PathBuf,
        /// Waveform normalization before feature extraction (peak, rms, none).
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<Normalization>,
    },
    /// Train a model; writes `checkpoint.rsmc` and `metrics.jsonl` into `--out`.
    Train {
        /// Overrides the config's corpus directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Export the per-layer token weights of one utterance as CSV.
    Weights {
        /// RSMC checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// MELF features or a WAV file.
        input: PathBuf,
        /// Second utterance; prints the flattened-weight cosine similarity.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Also write the weights and summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// MELF-style binary container.
        #[arg(long)]
        container: Option<PathBuf>,
        /// Waveform normalization for WAV inputs (peak, rms, none).
        #[arg(long, value_parser = parse_normalization, default_value = "peak")]
        normalization: Normalization,
    },
    /// Apply an edit script to source weights and write the recomposed embedding.
    Edit {
        /// RSMC checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source utterance (MELF or WAV).
        #[arg(long)]
        src: PathBuf,
        /// Target utterance (MELF or WAV).
        #[arg(long)]
        tgt: PathBuf,
        /// JSON edit script.
        #[arg(long)]
        script: PathBuf,
        /// Defaults to `<out>.provenance.json`.
        #[arg(long)]
        provenance: Option<PathBuf>,
        /// Waveform normalization for WAV inputs (peak, rms, none).
        #[arg(long, value_parser = parse_normalization, default_value = "peak")]
        normalization: Normalization,
    },
    /// Per-layer spread of layer contributions, one table row per checkpoint.
    AnalyzeStd {
        /// RSMC checkpoint; repeat to add table rows.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// Corpus directory with `corpus.json`.
        #[arg(long)]
        corpus: PathBuf,
        /// Only use utterances whose per-speaker index is at least this.
        #[arg(long, default_value_t = 0)]
        min_index: usize,
        /// Waveform normalization (peak, rms, none).
        #[arg(long, value_parser = parse_normalization, default_value = "peak")]
        normalization: Normalization,
    },
    /// Compare analytic gradients with finite differences in every residual mode.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Generate a synthetic multi-speaker corpus directory.
    GenCorpus {
        /// Number of speakers.
        #[arg(long)]
        speakers: Option<usize>,
        /// Utterances per speaker.
        #[arg(long)]
        utterances: Option<usize>,
        /// Shortest utterance in seconds.
        #[arg(long)]
        min_duration: Option<f64>,
        /// Longest utterance in seconds.
        #[arg(long)]
        max_duration: Option<f64>,
    },
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown normalization `{s}` (expected peak, rms or none)"))
}

/// Whether a command finished cleanly or reported failures of its own.
pub enum Outcome {
    Success,
    Failed,
}

pub fn exit_code(err: &RsmError) -> u8 {
    if err.is_config() {
        2
    } else {
        1
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

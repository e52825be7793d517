//! Per-layer spread statistics and the gradient-check harness.

mod gradcheck;
mod std_report;

pub use gradcheck::{run_gradcheck, Fault, GradcheckConfig, GradcheckReport, ModeSection, ParamFinding};
pub use std_report::{layer_std, mel_fingerprint, std_report, StdReport, StdRow, STD_DEFINITION};

//! Analytic gradients against central finite differences, for every
//! parameter tensor and every residual mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmError};
use crate::model::{parameter_layout, ResidualMode, RsmConfig, RsmModel, Tape};
use crate::numerics::{dot, finite_diff_gradient, max_relative_error, Matrix, DEFAULT_STEP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// `residual_mode` is overridden by each entry of `modes`.
    pub model: RsmConfig,
    pub modes: Vec<ResidualMode>,
    pub frames: usize,
    pub input_seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the per-coordinate relative error.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let mut model = RsmConfig {
            d_s: 8,
            alpha: 2,
            n_tokens: 4,
            n_layers: 3,
            seed: 7,
            ..Default::default()
        };
        model.encoder.mel_bins = 16;
        model.encoder.channels = [2, 3];
        model.encoder.kernel = 3;
        GradcheckConfig {
            model,
            modes: ResidualMode::ALL.to_vec(),
            frames: 4,
            input_seed: 11,
            step: DEFAULT_STEP,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.d_s > 16 {
            return Err(RsmError::config(
                "gradcheck.model.d_s",
                "gradient checks need d_s <= 16",
            ));
        }
        if self.modes.is_empty() {
            return Err(RsmError::config("gradcheck.modes", "at least one mode is required"));
        }
        if self.frames == 0 {
            return Err(RsmError::config("gradcheck.frames", "must be positive"));
        }
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.floor > 0.0) {
            return Err(RsmError::config(
                "gradcheck.step",
                "step, tolerance and floor must be positive",
            ));
        }
        Ok(())
    }
}

/// Test fixture: corrupts one analytic gradient to prove the check can fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fault {
    ScaleGradient { parameter: String, factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFinding {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSection {
    pub mode: ResidualMode,
    pub system: String,
    pub findings: Vec<ParamFinding>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub sections: Vec<ModeSection>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&format!("== {} ({}) ==\n", s.mode, s.system));
            for f in &s.findings {
                let mark = if f.passed { "ok  " } else { "FAIL" };
                out.push_str(&format!("{mark} {:<24} {:.3e}\n", f.name, f.max_relative_error));
            }
        }
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{verdict}: tolerance {:e}\n", self.tolerance));
        out
    }
}

/// Scalar probe `L = c · E(x)` with fixed random `x` and `c`.
pub fn run_gradcheck(cfg: &GradcheckConfig, fault: Option<&Fault>) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.input_seed);
    let bins = cfg.model.encoder.mel_bins;
    let frames = Matrix::from_vec(
        cfg.frames,
        bins,
        (0..cfg.frames * bins).map(|_| rng.random_range(-4.0..2.0)).collect(),
    )?;
    let probe: Vec<f64> = (0..cfg.model.d_s).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut sections = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let model = RsmModel::new(RsmConfig {
            residual_mode: mode,
            ..cfg.model.clone()
        })?;
        let mut tape = Tape::new();
        model.forward_frames(&frames, Some(&mut tape))?;
        let grads = model.backward(&tape, &probe)?;
        let mut findings = Vec::new();
        for (idx, ((name, ..), analytic)) in parameter_layout(&model.config)
            .into_iter()
            .zip(grads.tensors())
            .enumerate()
        {
            let mut analytic = analytic.clone();
            if let Some(Fault::ScaleGradient { parameter, factor }) = fault {
                if *parameter == name {
                    analytic.scale(*factor);
                }
            }
            let numeric = finite_diff_gradient(
                |m| {
                    let mut probe_model = model.clone();
                    *probe_model.params.tensors_mut()[idx] = m.clone();
                    Ok(dot(&probe_model.forward_frames(&frames, None)?.embedding, &probe))
                },
                model.params.tensors()[idx],
                cfg.step,
            )
            .map_err(|e| RsmError::NonFinite(format!("finite differences for parameter `{name}`: {e}")))?;
            if !analytic.is_finite() || !numeric.is_finite() {
                return Err(RsmError::NonFinite(format!(
                    "gradient of parameter `{name}` in mode {mode}"
                )));
            }
            let err = max_relative_error(analytic.data(), numeric.data(), cfg.floor);
            findings.push(ParamFinding {
                name,
                max_relative_error: err,
                passed: err <= cfg.tolerance,
            });
        }
        sections.push(ModeSection {
            mode,
            system: mode.system_id().to_string(),
            passed: findings.iter().all(|f| f.passed),
            findings,
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        passed: sections.iter().all(|s| s.passed),
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes_in_all_modes() {
        let r = run_gradcheck(&GradcheckConfig::default(), None).unwrap();
        assert!(r.passed, "{}", r.render());
        assert_eq!(r.sections.len(), 3);
        assert_eq!(r.sections[0].findings.len(), 9 + 5 * 3);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let fault = Fault::ScaleGradient {
            parameter: "layers.1.w_k".into(),
            factor: 1.01,
        };
        let r = run_gradcheck(&GradcheckConfig::default(), Some(&fault)).unwrap();
        assert!(!r.passed);
        for s in &r.sections {
            let bad: Vec<_> = s
                .findings
                .iter()
                .filter(|f| !f.passed)
                .map(|f| f.name.as_str())
                .collect();
            assert_eq!(bad, ["layers.1.w_k"]);
        }
    }

    #[test]
    fn large_shapes_rejected() {
        let mut cfg = GradcheckConfig::default();
        cfg.model.d_s = 32;
        assert!(run_gradcheck(&cfg, None).unwrap_err().is_config());
    }
}

//! Token-weight extraction and weight-space timbre editing.
//!
//! Edits act on post-softmax weight rows. Because the embedding is a sum of
//! per-layer value-path terms that are each linear in their weight row,
//! changing one row moves the embedding by exactly that layer's delta.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RsmError};
use crate::features::melf::{decode_container, encode_container, MelfHeader};
use crate::features::MelSpectrogram;
use crate::model::{contribution_from_weights, Checkpoint, RsmModel, RsmOutput};
use crate::numerics::{axpy, cosine_distance, Matrix};

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;
pub const RECOMPOSE_TOLERANCE: f64 = 1e-6;

/// `K × n` attention weights, one simplex row per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix(Matrix);

impl WeightMatrix {
    pub fn new(rows: Matrix) -> Result<Self> {
        check_simplex(&rows, SIMPLEX_TOLERANCE)?;
        Ok(WeightMatrix(rows))
    }

    /// Accepts rows within `tol` of the simplex.
    pub fn with_tolerance(rows: Matrix, tol: f64) -> Result<Self> {
        check_simplex(&rows, tol)?;
        Ok(WeightMatrix(rows))
    }

    pub fn from_output(out: &RsmOutput) -> Self {
        let rows: Vec<Vec<f64>> = out.layers.iter().map(|l| l.weights.clone()).collect();
        WeightMatrix(Matrix::from_rows(&rows).expect("equal token counts"))
    }

    pub fn layers(&self) -> usize {
        self.0.rows()
    }

    pub fn tokens(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        self.0.row(layer)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// Row-major flattening, used for weight-pattern similarity.
    pub fn flattened(&self) -> &[f64] {
        self.0.data()
    }

    /// `K` lines of `n` comma-separated values with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.layers() {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:.8e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                line.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| RsmError::Format(format!("weights CSV line {}: {e}", i + 1)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        WeightMatrix::with_tolerance(Matrix::from_rows(&rows)?, RECOMPOSE_TOLERANCE)
    }

    /// MELF-style JSON header + `f32` payload with `kind = "weights"`.
    pub fn to_container(&self, meta: Option<serde_json::Value>) -> Result<Vec<u8>> {
        let mut header = MelfHeader::new("weights", self.layers(), self.tokens());
        header.meta = meta;
        encode_container(&header, &self.0)
    }

    pub fn from_container(bytes: &[u8]) -> Result<Self> {
        let (header, m) = decode_container(bytes)?;
        if header.kind != "weights" {
            return Err(RsmError::Format(format!(
                "container holds `{}`, expected `weights`",
                header.kind
            )));
        }
        // f32 storage loses precision; accept with the recompose tolerance.
        WeightMatrix::with_tolerance(m, RECOMPOSE_TOLERANCE)
    }
}

fn check_simplex(m: &Matrix, tol: f64) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row(r);
        if let Some(j) = row.iter().position(|v| !(*v >= -tol)) {
            return Err(RsmError::Validation(format!(
                "weight row {r} has entry {j} = {} below zero",
                row[j]
            )));
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= tol) {
            return Err(RsmError::Validation(format!(
                "weight row {r} sums to {sum}, not 1 (tolerance {tol:e})"
            )));
        }
    }
    Ok(())
}

/// Runs the module and returns its per-layer token weights.
pub fn extract_weights(mel: &MelSpectrogram, checkpoint: &Checkpoint) -> Result<WeightMatrix> {
    checkpoint.check_features(mel)?;
    Ok(WeightMatrix::from_output(&checkpoint.model.forward(mel)?))
}

/// Per-layer value-path terms `(w_i · (C_i W_v,i)) · W_o,i`.
pub fn layer_contributions(weights: &WeightMatrix, model: &RsmModel) -> Result<Vec<Vec<f64>>> {
    check_simplex(&weights.0, RECOMPOSE_TOLERANCE)?;
    if weights.layers() != model.config.n_layers || weights.tokens() != model.config.n_tokens {
        return Err(RsmError::Shape(format!(
            "weights are {}x{}, model has {} layers of {} tokens",
            weights.layers(),
            weights.tokens(),
            model.config.n_layers,
            model.config.n_tokens
        )));
    }
    model
        .params
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| contribution_from_weights(layer, weights.row(i)))
        .collect()
}

/// Rebuilds an embedding from weights alone, bypassing the query path.
pub fn recompose(weights: &WeightMatrix, model: &RsmModel) -> Result<Vec<f64>> {
    let mut e = vec![0.0; model.config.d_s];
    for c in layer_contributions(weights, model)? {
        axpy(1.0, &c, &mut e);
    }
    Ok(e)
}

/// Weight rows alongside the model needed to turn them back into an embedding.
#[derive(Clone, Debug)]
pub struct Decomposition<'a> {
    pub weights: WeightMatrix,
    pub model: &'a RsmModel,
}

impl<'a> Decomposition<'a> {
    pub fn of(mel: &MelSpectrogram, model: &'a RsmModel) -> Result<Self> {
        Ok(Decomposition {
            weights: WeightMatrix::from_output(&model.forward(mel)?),
            model,
        })
    }

    pub fn recompose(&self) -> Result<Vec<f64>> {
        recompose(&self.weights, self.model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditSource {
    Src,
    Tgt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edit {
    /// Take the row for `layer` from the source or the target.
    ReplaceLayer { layer: usize, source: EditSource },
    /// `(1 - λ) · current + λ · target` for `layer`.
    InterpolateLayer { layer: usize, lambda: f64 },
    /// Multiply one entry; optionally rescale the row back onto the simplex.
    ScaleEntry {
        layer: usize,
        token: usize,
        factor: f64,
        #[serde(default = "default_true")]
        renormalize: bool,
    },
}

fn default_true() -> bool {
    true
}

pub const EDIT_SCRIPT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditScript {
    pub version: u32,
    pub edits: Vec<Edit>,
}

impl EditScript {
    pub fn new(edits: Vec<Edit>) -> Self {
        EditScript {
            version: EDIT_SCRIPT_VERSION,
            edits,
        }
    }

    /// Parses `{"version": 1, "edits": [...]}` or a bare array of edits.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RsmError::config("script", e.to_string()))?;
        let (version, items) = match raw {
            serde_json::Value::Array(items) => (EDIT_SCRIPT_VERSION, items),
            raw => {
                let obj = raw
                    .as_object()
                    .ok_or_else(|| RsmError::config("script", "expected an object or an array"))?;
                if let Some(k) = obj.keys().find(|k| *k != "version" && *k != "edits") {
                    return Err(RsmError::config(format!("script.{k}"), "unknown field"));
                }
                let version = obj
                    .get("version")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| RsmError::config("script.version", "missing or not an integer"))?;
                let items = obj
                    .get("edits")
                    .and_then(|v| v.as_array())
                    .cloned()
                    .ok_or_else(|| RsmError::config("script.edits", "missing or not an array"))?;
                (version as u32, items)
            }
        };
        if version != EDIT_SCRIPT_VERSION {
            return Err(RsmError::config(
                "script.version",
                format!("unsupported version {version}"),
            ));
        }
        let edits = items
            .into_iter()
            .enumerate()
            .map(|(index, v)| {
                serde_json::from_value(v).map_err(|e| RsmError::Edit {
                    index,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<Edit>>>()?;
        Ok(EditScript { version, edits })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("edit scripts serialize")
    }

    pub fn validate(&self, layers: usize, tokens: usize) -> Result<()> {
        for (index, edit) in self.edits.iter().enumerate() {
            let fail = |message: String| Err(RsmError::Edit { index, message });
            let layer = match edit {
                Edit::ReplaceLayer { layer, .. }
                | Edit::InterpolateLayer { layer, .. }
                | Edit::ScaleEntry { layer, .. } => *layer,
            };
            if layer >= layers {
                return fail(format!("layer {layer} out of range (model has {layers})"));
            }
            match edit {
                Edit::InterpolateLayer { lambda, .. } if !(0.0..=1.0).contains(lambda) => {
                    return fail(format!("lambda {lambda} outside [0, 1]"));
                }
                Edit::ScaleEntry { token, .. } if *token >= tokens => {
                    return fail(format!("token {token} out of range (layer has {tokens})"));
                }
                Edit::ScaleEntry { factor, .. } if !(*factor >= 0.0 && factor.is_finite()) => {
                    return fail(format!("factor {factor} must be finite and non-negative"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Applies `script` to `src`, drawing replacement rows from `tgt`.
pub fn apply_edits(src: &WeightMatrix, tgt: &WeightMatrix, script: &EditScript) -> Result<WeightMatrix> {
    if src.0.shape() != tgt.0.shape() {
        return Err(RsmError::Shape(format!(
            "source weights {:?} and target weights {:?} differ in shape",
            src.0.shape(),
            tgt.0.shape()
        )));
    }
    script.validate(src.layers(), src.tokens())?;
    let mut out = src.0.clone();
    for (index, edit) in script.edits.iter().enumerate() {
        match *edit {
            Edit::ReplaceLayer { layer, source } => {
                let from = match source {
                    EditSource::Src => src.row(layer),
                    EditSource::Tgt => tgt.row(layer),
                };
                out.row_mut(layer).copy_from_slice(from);
            }
            Edit::InterpolateLayer { layer, lambda } => {
                let t = tgt.row(layer);
                out.row_mut(layer)
                    .iter_mut()
                    .zip(t)
                    .for_each(|(c, t)| *c = (1.0 - lambda) * *c + lambda * t);
            }
            Edit::ScaleEntry {
                layer,
                token,
                factor,
                renormalize,
            } => {
                let row = out.row_mut(layer);
                row[token] *= factor;
                if renormalize {
                    let sum: f64 = row.iter().sum();
                    if !(sum > 0.0) {
                        return Err(RsmError::Edit {
                            index,
                            message: format!("layer {layer} row is all zero and cannot be renormalized"),
                        });
                    }
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
    }
    WeightMatrix::new(out).map_err(|e| match e {
        RsmError::Validation(m) => RsmError::Validation(format!("edited weights left the simplex: {m}")),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementEntry {
    pub layer: usize,
    pub embedding: Vec<f64>,
    pub distance_to_source: f64,
    pub distance_to_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReplacementStudy {
    pub source_embedding: Vec<f64>,
    pub target_embedding: Vec<f64>,
    pub entries: Vec<ReplacementEntry>,
}

/// For each layer `j`, swaps only that layer's weights from target into source.
pub fn layer_replacement_study(
    src: &MelSpectrogram,
    tgt: &MelSpectrogram,
    checkpoint: &Checkpoint,
) -> Result<LayerReplacementStudy> {
    let model = &checkpoint.model;
    let ws = extract_weights(src, checkpoint)?;
    let wt = extract_weights(tgt, checkpoint)?;
    let source_embedding = recompose(&ws, model)?;
    let target_embedding = recompose(&wt, model)?;
    let entries = (0..ws.layers())
        .map(|layer| {
            let script = EditScript::new(vec![Edit::ReplaceLayer {
                layer,
                source: EditSource::Tgt,
            }]);
            let embedding = recompose(&apply_edits(&ws, &wt, &script)?, model)?;
            Ok(ReplacementEntry {
                layer,
                distance_to_source: cosine_distance(&embedding, &source_embedding),
                distance_to_target: cosine_distance(&embedding, &target_embedding),
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerReplacementStudy {
        source_embedding,
        target_embedding,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MelConfig;
    use crate::model::{ResidualMode, RsmConfig};
    use crate::numerics::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(mode: ResidualMode) -> (Checkpoint, MelSpectrogram, MelSpectrogram) {
        let mut cfg = RsmConfig {
            d_s: 16,
            alpha: 4,
            n_tokens: 5,
            n_layers: 3,
            residual_mode: mode,
            ..Default::default()
        };
        cfg.encoder.mel_bins = 20;
        cfg.encoder.channels = [3, 4];
        cfg.encoder.kernel = 3;
        // Large init so attention is far from uniform.
        cfg.init = crate::model::InitScheme::Uniform { gain: 3.0 };
        let mel_cfg = MelConfig {
            mel_bins: 20,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mel = |t: usize| MelSpectrogram {
            frames: Matrix::from_vec(t, 20, (0..t * 20).map(|_| rng.random_range(-5.0..3.0)).collect()).unwrap(),
            config: mel_cfg.clone(),
        };
        let (a, b) = (mel(6), mel(8));
        let ck = Checkpoint {
            model: RsmModel::new(cfg).unwrap(),
            mel: mel_cfg,
            seed: 1,
            step: 0,
        };
        (ck, a, b)
    }

    fn one_hot(k: usize, n: usize, j: usize) -> WeightMatrix {
        let mut m = Matrix::zeros(k, n);
        for r in 0..k {
            m.set(r, j, 1.0);
        }
        WeightMatrix::new(m).unwrap()
    }

    #[test]
    fn extract_gives_simplex_rows_deterministically() {
        let (ck, a, _) = setup(ResidualMode::PerLayer);
        let w = extract_weights(&a, &ck).unwrap();
        assert_eq!((w.layers(), w.tokens()), (3, 5));
        for r in 0..3 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        assert_eq!(extract_weights(&a, &ck).unwrap(), w);
    }

    #[test]
    fn extract_rejects_mismatched_features() {
        let (ck, mut a, _) = setup(ResidualMode::PerLayer);
        a.config.fmax = 7000.0;
        assert!(extract_weights(&a, &ck).is_err());
    }

    #[test]
    fn recompose_roundtrip_all_modes() {
        for mode in ResidualMode::ALL {
            let (ck, a, _) = setup(mode);
            let out = ck.model.forward(&a).unwrap();
            let e = Decomposition::of(&a, &ck.model).unwrap().recompose().unwrap();
            assert!(max_abs_diff(&e, &out.embedding) <= 1e-9, "{mode}");
        }
    }

    #[test]
    fn one_hot_and_uniform_endpoints() {
        let (ck, ..) = setup(ResidualMode::PerLayer);
        let model = &ck.model;
        let e = recompose(&one_hot(3, 5, 2), model).unwrap();
        let mut direct = vec![0.0; 16];
        for p in &model.params.layers {
            let token_value = p.w_v.vec_mul(p.tokens.row(2)).unwrap();
            axpy(1.0, &p.w_o.vec_mul(&token_value).unwrap(), &mut direct);
        }
        assert!(max_abs_diff(&e, &direct) < 1e-12);

        let uniform = WeightMatrix::new(Matrix::from_vec(3, 5, vec![0.2; 15]).unwrap()).unwrap();
        let e = recompose(&uniform, model).unwrap();
        let mut direct = vec![0.0; 16];
        for p in &model.params.layers {
            for j in 0..5 {
                let out = p.w_o.vec_mul(&p.w_v.vec_mul(p.tokens.row(j)).unwrap()).unwrap();
                axpy(0.2, &out, &mut direct);
            }
        }
        assert!(max_abs_diff(&e, &direct) < 1e-12);
    }

    #[test]
    fn off_simplex_rejected() {
        let (ck, ..) = setup(ResidualMode::PerLayer);
        let m = Matrix::from_vec(3, 5, vec![0.3; 15]).unwrap();
        assert!(WeightMatrix::new(m.clone()).is_err());
        assert!(recompose(&WeightMatrix(m), &ck.model).is_err());
    }

    #[test]
    fn edit_identities() {
        let (ck, a, b) = setup(ResidualMode::PerLayer);
        let ws = extract_weights(&a, &ck).unwrap();
        let wt = extract_weights(&b, &ck).unwrap();
        assert_eq!(apply_edits(&ws, &wt, &EditScript::new(vec![])).unwrap(), ws);

        let all: Vec<Edit> = (0..3)
            .map(|layer| Edit::ReplaceLayer {
                layer,
                source: EditSource::Tgt,
            })
            .collect();
        let replaced = apply_edits(&ws, &wt, &EditScript::new(all.clone())).unwrap();
        assert_eq!(replaced, wt);
        assert_eq!(apply_edits(&wt, &ws, &EditScript::new(all)).unwrap(), ws);

        let half = EditScript::new(vec![Edit::InterpolateLayer { layer: 1, lambda: 0.5 }]);
        let mixed = apply_edits(&ws, &wt, &half).unwrap();
        for j in 0..5 {
            assert!((mixed.row(1)[j] - 0.5 * (ws.row(1)[j] + wt.row(1)[j])).abs() < 1e-15);
        }
        assert!((mixed.row(1).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert_eq!(mixed.row(0), ws.row(0));
    }

    #[test]
    fn scale_entry_renormalizes() {
        let (ck, a, b) = setup(ResidualMode::PerLayer);
        let ws = extract_weights(&a, &ck).unwrap();
        let wt = extract_weights(&b, &ck).unwrap();
        let s = EditScript::new(vec![Edit::ScaleEntry {
            layer: 2,
            token: 1,
            factor: 3.0,
            renormalize: true,
        }]);
        let out = apply_edits(&ws, &wt, &s).unwrap();
        assert!((out.row(2).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(out.row(2)[1] > ws.row(2)[1]);

        let one_hot_src = one_hot(3, 5, 0);
        let kill = EditScript::new(vec![Edit::ScaleEntry {
            layer: 0,
            token: 0,
            factor: 0.0,
            renormalize: true,
        }]);
        let err = apply_edits(&one_hot_src, &one_hot_src, &kill).unwrap_err();
        assert!(matches!(err, RsmError::Edit { index: 0, .. }));
    }

    #[test]
    fn invalid_scripts_report_index() {
        let w = one_hot(3, 5, 0);
        let bad = EditScript::new(vec![
            Edit::ReplaceLayer {
                layer: 0,
                source: EditSource::Tgt,
            },
            Edit::ReplaceLayer {
                layer: 7,
                source: EditSource::Tgt,
            },
        ]);
        assert!(matches!(
            apply_edits(&w, &w, &bad),
            Err(RsmError::Edit { index: 1, .. })
        ));
        let bad = EditScript::new(vec![Edit::InterpolateLayer { layer: 0, lambda: 1.5 }]);
        assert!(matches!(
            apply_edits(&w, &w, &bad),
            Err(RsmError::Edit { index: 0, .. })
        ));
        let bad = EditScript::new(vec![Edit::ScaleEntry {
            layer: 0,
            token: 9,
            factor: 1.0,
            renormalize: false,
        }]);
        assert!(matches!(
            apply_edits(&w, &w, &bad),
            Err(RsmError::Edit { index: 0, .. })
        ));
    }

    #[test]
    fn script_json_forms() {
        let s = EditScript::from_json("[]").unwrap();
        assert!(s.edits.is_empty());
        let s = EditScript::from_json(
            r#"{"version":1,"edits":[{"op":"replace_layer","layer":1,"source":"tgt"},
                {"op":"interpolate_layer","layer":0,"lambda":0.25},
                {"op":"scale_entry","layer":2,"token":3,"factor":2.0}]}"#,
        )
        .unwrap();
        assert_eq!(s.edits.len(), 3);
        assert_eq!(EditScript::from_json(&s.to_json()).unwrap(), s);
        let err =
            EditScript::from_json(r#"[{"op":"replace_layer","layer":0,"source":"src"},{"op":"nope"}]"#).unwrap_err();
        assert!(matches!(err, RsmError::Edit { index: 1, .. }));
        assert!(EditScript::from_json(r#"{"version":2,"edits":[]}"#).is_err());
        assert!(EditScript::from_json(r#"{"version":1,"edits":[],"x":1}"#).is_err());
    }

    #[test]
    fn replacement_study_additivity() {
        let (ck, a, b) = setup(ResidualMode::PerLayer);
        let study = layer_replacement_study(&a, &b, &ck).unwrap();
        let ws = extract_weights(&a, &ck).unwrap();
        let wt = extract_weights(&b, &ck).unwrap();
        let cs = layer_contributions(&ws, &ck.model).unwrap();
        let ct = layer_contributions(&wt, &ck.model).unwrap();
        for entry in &study.entries {
            let j = entry.layer;
            for d in 0..16 {
                let lhs = entry.embedding[d] - study.source_embedding[d];
                let rhs = ct[j][d] - cs[j][d];
                assert!((lhs - rhs).abs() <= 1e-9);
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(max_abs_diff(&study.entries[i].embedding, &study.entries[j].embedding) > 0.0);
            }
        }
        let none = recompose(&apply_edits(&ws, &wt, &EditScript::new(vec![])).unwrap(), &ck.model).unwrap();
        assert_eq!(none, study.source_embedding);
    }

    #[test]
    fn csv_and_container_roundtrip() {
        let (ck, a, _) = setup(ResidualMode::PerLayer);
        let w = extract_weights(&a, &ck).unwrap();
        let csv = w.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 5);
        let back = WeightMatrix::from_csv(&csv).unwrap();
        for (x, y) in back.flattened().iter().zip(w.flattened()) {
            assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-300));
        }
        let c = WeightMatrix::from_container(&w.to_container(None).unwrap()).unwrap();
        for (x, y) in c.flattened().iter().zip(w.flattened()) {
            assert!((x - y).abs() <= 1e-7);
        }
    }
}

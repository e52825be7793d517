//! Desk-scale training: a linear speaker-classification head on `E`, plus an
//! optional supervised contrastive term on cosine similarity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{slice_segment, Corpus};
use crate::error::{Result, RsmError};
use crate::features::{normalize_audio, MelExtractor, MelSpectrogram, Normalization};
use crate::model::{Checkpoint, RsmModel, RsmParams, Tape};
use crate::numerics::{axpy, dot, lr_at_epoch, norm, softmax_row, Matrix, OptimizerConfig, Parameter};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "classification")]
    Classification,
    #[default]
    #[serde(rename = "classification+contrastive")]
    ClassificationContrastive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub segment_frames: usize,
    pub max_steps: u64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Speakers `0..num_speakers` of the corpus are used.
    pub num_speakers: usize,
    /// Per speaker, utterances with index below this are used.
    pub utterances_per_speaker: usize,
    pub loss: LossKind,
    pub contrastive_weight: f64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            segment_frames: 128,
            max_steps: 2000,
            optimizer: OptimizerConfig::default(),
            seed: 1234,
            num_speakers: 20,
            utterances_per_speaker: 20,
            loss: LossKind::default(),
            contrastive_weight: 1.0,
            temperature: 0.1,
        }
    }
}

impl TrainConfig {
    /// The shipped CPU training setup: short slices, small batches.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            segment_frames: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.segment_frames == 0 {
            return Err(RsmError::config("train.segment_frames", "must be at least 1"));
        }
        let min_batch = if self.loss == LossKind::Classification { 1 } else { 2 };
        if self.batch_size < min_batch {
            return Err(RsmError::config(
                "train.batch_size",
                format!("must be at least {min_batch} for this loss"),
            ));
        }
        if self.max_steps == 0 {
            return Err(RsmError::config("train.max_steps", "must be positive"));
        }
        if self.num_speakers < 2 {
            return Err(RsmError::config(
                "train.num_speakers",
                "at least 2 speakers are required",
            ));
        }
        if self.utterances_per_speaker == 0 {
            return Err(RsmError::config("train.utterances_per_speaker", "must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(RsmError::config("train.temperature", "must be positive"));
        }
        if !(self.contrastive_weight >= 0.0) {
            return Err(RsmError::config("train.contrastive_weight", "must be non-negative"));
        }
        Ok(())
    }
}

/// A mel-spectrogram with its speaker label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMel {
    pub mel: MelSpectrogram,
    pub speaker: usize,
    pub index: usize,
}

/// Normalizes and featurizes every utterance of a corpus, in corpus order.
pub fn prepare_mels(corpus: &Corpus, extractor: &MelExtractor, norm: Normalization) -> Result<Vec<LabeledMel>> {
    corpus
        .utterances
        .iter()
        .map(|u| {
            Ok(LabeledMel {
                mel: extractor.compute(&normalize_audio(&u.clip, norm)?)?,
                speaker: u.speaker,
                index: u.index,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
}

/// Linear classifier `logits = E W + b`; training state only.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weight: Matrix,
    pub bias: Matrix,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub head: ClassifierHead,
    pub metrics: Vec<StepRecord>,
}

struct BatchLoss {
    total: f64,
    classification: f64,
    contrastive: Option<f64>,
    grad_embeddings: Vec<Vec<f64>>,
    grad_weight: Matrix,
    grad_bias: Vec<f64>,
}

fn batch_loss(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    head: &ClassifierHead,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let b = embeddings.len();
    let d = head.weight.rows();
    let classes = head.weight.cols();
    let mut grad_embeddings = vec![vec![0.0; d]; b];
    let mut grad_weight = Matrix::zeros(d, classes);
    let mut grad_bias = vec![0.0; classes];
    let mut ce = 0.0;
    for (i, e) in embeddings.iter().enumerate() {
        let mut logits = head.weight.vec_mul(e)?;
        axpy(1.0, head.bias.row(0), &mut logits);
        let p = softmax_row(&logits)?;
        ce -= p[labels[i]].max(f64::MIN_POSITIVE).ln();
        let mut g = p;
        g[labels[i]] -= 1.0;
        g.iter_mut().for_each(|v| *v /= b as f64);
        grad_weight.add_outer(e, &g);
        axpy(1.0, &g, &mut grad_bias);
        grad_embeddings[i] = head.weight.mul_vec_t(&g)?;
    }
    ce /= b as f64;

    let contrastive = match cfg.loss {
        LossKind::Classification => None,
        LossKind::ClassificationContrastive => {
            let (l, grads) = supervised_contrastive(embeddings, labels, cfg.temperature)?;
            for (ge, gc) in grad_embeddings.iter_mut().zip(&grads) {
                axpy(cfg.contrastive_weight, gc, ge);
            }
            Some(l)
        }
    };
    Ok(BatchLoss {
        total: ce + cfg.contrastive_weight * contrastive.unwrap_or(0.0),
        classification: ce,
        contrastive,
        grad_embeddings,
        grad_weight,
        grad_bias,
    })
}

/// Supervised contrastive loss on unit-normalized embeddings, averaged over
/// anchors that have at least one positive in the batch. Returns the loss and
/// `dL/dE` per embedding.
pub fn supervised_contrastive(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = embeddings.len();
    let d = embeddings.first().map_or(0, |e| e.len());
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(e).max(1e-12)).collect();
    let z: Vec<Vec<f64>> = embeddings
        .iter()
        .zip(&norms)
        .map(|(e, n)| e.iter().map(|v| v / n).collect())
        .collect();
    let anchors: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    let mut grad_z = vec![vec![0.0; d]; b];
    if anchors.is_empty() {
        return Ok((0.0, grad_z));
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut loss = 0.0;
    for &i in &anchors {
        let others: Vec<usize> = (0..b).filter(|&a| a != i).collect();
        let sims: Vec<f64> = others.iter().map(|&a| dot(&z[i], &z[a]) / temperature).collect();
        let p = softmax_row(&sims)?;
        let max = sims.iter().cloned().fold(f64::MIN, f64::max);
        let lse = max + sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let positives = others.iter().filter(|&&a| labels[a] == labels[i]).count() as f64;
        for (k, &a) in others.iter().enumerate() {
            let is_pos = labels[a] == labels[i];
            if is_pos {
                loss -= scale * (sims[k] - lse) / positives;
            }
            let g = scale * (p[k] - if is_pos { 1.0 / positives } else { 0.0 }) / temperature;
            let (zi, za) = (z[i].clone(), z[a].clone());
            axpy(g, &za, &mut grad_z[i]);
            axpy(g, &zi, &mut grad_z[a]);
        }
    }
    // Back through z = e / |e|.
    let grads = grad_z
        .iter()
        .zip(&z)
        .zip(&norms)
        .map(|((gz, zz), n)| {
            let radial = dot(gz, zz);
            gz.iter().zip(zz).map(|(g, v)| (g - radial * v) / n).collect()
        })
        .collect();
    Ok((loss, grads))
}

fn parameter_norms(model: &RsmModel) -> String {
    crate::model::parameter_layout(&model.config)
        .iter()
        .zip(model.params.tensors())
        .map(|((name, ..), m)| format!("{name}={:.6e}", m.frobenius_norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Trains `model` on the configured subset of `data`.
///
/// Each epoch is one shuffled pass over the training utterances; the learning
/// rate follows [`lr_at_epoch`] and changes only at epoch boundaries.
pub fn train(data: &[LabeledMel], mut model: RsmModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let subset: Vec<&LabeledMel> = data
        .iter()
        .filter(|u| u.speaker < cfg.num_speakers && u.index < cfg.utterances_per_speaker)
        .collect();
    for s in 0..cfg.num_speakers {
        let have = subset.iter().filter(|u| u.speaker == s).count();
        if have < cfg.utterances_per_speaker {
            return Err(RsmError::InvalidInput(format!(
                "speaker {s} has {have} training utterances, {} required",
                cfg.utterances_per_speaker
            )));
        }
    }
    let mel_cfg = subset[0].mel.config.clone();
    if subset.iter().any(|u| u.mel.config != mel_cfg) {
        return Err(RsmError::Validation(
            "training features use inconsistent mel configurations".into(),
        ));
    }

    let d = model.config.d_s;
    let classes = cfg.num_speakers;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut head = ClassifierHead {
        weight: Matrix::from_vec(
            d,
            classes,
            (0..d * classes).map(|_| rng.random_range(-bound..=bound)).collect(),
        )?,
        bias: Matrix::zeros(1, classes),
    };

    let names = crate::model::parameter_layout(&model.config);
    let mut params: Vec<Parameter> = names
        .iter()
        .zip(model.params.tensors())
        .map(|((name, ..), m)| Parameter::new(name.clone(), m.clone()))
        .collect();
    params.push(Parameter::new("head.weight", head.weight.clone()));
    params.push(Parameter::new("head.bias", head.bias.clone()));

    let mut order: Vec<usize> = (0..subset.len()).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut epoch = 0u64;
    let mut metrics = Vec::with_capacity(cfg.max_steps as usize);
    let mut grads = RsmParams::zeros(&model.config);

    for step in 1..=cfg.max_steps {
        if pos >= order.len() {
            epoch += 1;
            order.shuffle(&mut rng);
            pos = 0;
        }
        let batch = &order[pos..(pos + cfg.batch_size).min(order.len())];
        pos += cfg.batch_size;
        let lr = lr_at_epoch(epoch, &cfg.optimizer);

        let mut tapes: Vec<Tape> = Vec::with_capacity(batch.len());
        let mut embeddings = Vec::with_capacity(batch.len());
        let labels: Vec<usize> = batch.iter().map(|&i| subset[i].speaker).collect();
        for &i in batch {
            let seg = slice_segment(&subset[i].mel, cfg.segment_frames, &mut rng);
            let mut tape = Tape::new();
            let out = match model.forward_frames(&seg.frames, Some(&mut tape)) {
                Ok(out) => out,
                Err(RsmError::NonFinite(_)) => {
                    return Err(RsmError::NonFiniteLoss {
                        step,
                        norms: parameter_norms(&model),
                    })
                }
                Err(e) => return Err(e),
            };
            embeddings.push(out.embedding);
            tapes.push(tape);
        }

        let loss = match batch_loss(&embeddings, &labels, &head, cfg) {
            Ok(l) if l.total.is_finite() => l,
            Ok(_) | Err(RsmError::NonFinite(_)) => {
                return Err(RsmError::NonFiniteLoss {
                    step,
                    norms: parameter_norms(&model),
                })
            }
            Err(e) => return Err(e),
        };

        grads.scale(0.0);
        for (tape, g) in tapes.iter().zip(&loss.grad_embeddings) {
            model.backward_into(tape, g, &mut grads)?;
        }
        let n_model = names.len();
        for (p, g) in params[..n_model].iter_mut().zip(grads.tensors()) {
            p.gradient.data_mut().copy_from_slice(g.data());
        }
        params[n_model].gradient = loss.grad_weight;
        params[n_model + 1].gradient = Matrix::row_vector(&loss.grad_bias);
        for p in &mut params {
            p.adamw_step(lr, &cfg.optimizer)?;
        }
        for (dst, p) in model.params.tensors_mut().into_iter().zip(&params) {
            dst.data_mut().copy_from_slice(p.value.data());
        }
        head.weight = params[n_model].value.clone();
        head.bias = params[n_model + 1].value.clone();

        let mut components = BTreeMap::new();
        components.insert("classification".to_string(), loss.classification);
        if let Some(c) = loss.contrastive {
            components.insert("contrastive".to_string(), c);
        }
        metrics.push(StepRecord {
            step,
            epoch,
            lr,
            loss: loss.total,
            components,
        });
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            mel: mel_cfg,
            seed: cfg.seed,
            step: cfg.max_steps,
        },
        head,
        metrics,
    })
}

/// Serializes metrics as JSON lines.
pub fn metrics_jsonl(metrics: &[StepRecord]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MelConfig;
    use crate::model::RsmConfig;
    use crate::numerics::{finite_diff_gradient, max_relative_error};

    fn tiny_model() -> RsmModel {
        let mut cfg = RsmConfig {
            d_s: 8,
            alpha: 2,
            n_tokens: 4,
            n_layers: 2,
            ..Default::default()
        };
        cfg.encoder.mel_bins = 12;
        cfg.encoder.channels = [2, 3];
        cfg.encoder.kernel = 3;
        RsmModel::new(cfg).unwrap()
    }

    fn tiny_data(speakers: usize, per: usize) -> Vec<LabeledMel> {
        let cfg = MelConfig {
            mel_bins: 12,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut out = Vec::new();
        for s in 0..speakers {
            for index in 0..per {
                let t = rng.random_range(5..12);
                let data = (0..t * 12)
                    .map(|k| ((k % 12) as f64 * (s as f64 + 1.0)).sin() + 0.3 * rng.random_range(-1.0..1.0))
                    .collect();
                out.push(LabeledMel {
                    mel: MelSpectrogram {
                        frames: Matrix::from_vec(t, 12, data).unwrap(),
                        config: cfg.clone(),
                    },
                    speaker: s,
                    index,
                });
            }
        }
        out
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            segment_frames: 6,
            max_steps: 30,
            num_speakers: 3,
            utterances_per_speaker: 4,
            optimizer: OptimizerConfig {
                initial_lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels = [0, 1, 0, 2, 1];
        let e = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let rows = |m: &Matrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
        let (_, g) = supervised_contrastive(&rows(&e), &labels, 0.5).unwrap();
        let fd = finite_diff_gradient(|m| Ok(supervised_contrastive(&rows(m), &labels, 0.5)?.0), &e, 1e-5).unwrap();
        let analytic = Matrix::from_rows(&g).unwrap();
        assert!(max_relative_error(analytic.data(), fd.data(), 1e-6) < 1e-6);
    }

    #[test]
    fn contrastive_without_positives_is_zero() {
        let (l, g) = supervised_contrastive(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_logs_schedule() {
        let data = tiny_data(3, 5);
        let cfg = TrainConfig {
            optimizer: OptimizerConfig {
                decay_factor: 0.9,
                ..tiny_train_cfg().optimizer
            },
            ..tiny_train_cfg()
        };
        let a = train(&data, tiny_model(), &cfg).unwrap();
        let b = train(&data, tiny_model(), &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        // 12 training utterances, batch 4: three steps per epoch.
        for m in &a.metrics {
            assert_eq!(m.epoch, (m.step - 1) / 3);
            assert_eq!(m.lr, lr_at_epoch(m.epoch, &cfg.optimizer));
            assert!(m.loss.is_finite());
            assert_eq!(m.components.len(), 2);
        }
        let first = a.metrics[0].loss;
        let last = a.metrics.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn nan_features_abort_with_step_and_norms() {
        let mut data = tiny_data(3, 4);
        for u in &mut data {
            u.mel.frames.fill(f64::NAN);
        }
        match train(&data, tiny_model(), &tiny_train_cfg()) {
            Err(RsmError::NonFiniteLoss { step, norms }) => {
                assert_eq!(step, 1);
                assert!(norms.contains("down_proj="));
            }
            other => panic!("expected abort, got {:?}", other.err()),
        }
    }

    #[test]
    fn insufficient_or_invalid_inputs_rejected() {
        let data = tiny_data(2, 4);
        assert!(train(&data, tiny_model(), &tiny_train_cfg()).is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            ..tiny_train_cfg()
        };
        assert!(cfg.validate().unwrap_err().is_config());
        let cfg = TrainConfig {
            segment_frames: 0,
            ..tiny_train_cfg()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            loss: LossKind::Classification,
            ..tiny_train_cfg()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn loss_kind_serde_names() {
        assert_eq!(
            serde_json::to_string(&LossKind::ClassificationContrastive).unwrap(),
            "\"classification+contrastive\""
        );
        let k: LossKind = serde_json::from_str("\"classification\"").unwrap();
        assert_eq!(k, LossKind::Classification);
    }
}

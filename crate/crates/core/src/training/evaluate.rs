use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::train::LabeledMel;
use crate::error::{Result, RsmError};
use crate::model::RsmModel;
use crate::numerics::{axpy, cosine_similarity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEval {
    /// Leave-one-out nearest-centroid accuracy under cosine similarity.
    pub accuracy: f64,
    pub same_similarity: f64,
    pub different_similarity: f64,
    /// `same_similarity - different_similarity`.
    pub gap: f64,
    pub num_speakers: usize,
    pub num_utterances: usize,
}

/// Both statistics for one labelled set, with full-length utterances.
///
/// Each utterance is scored against per-speaker centroids built from the
/// *other* utterances, so every speaker needs at least two.
pub fn evaluate_embeddings(model: &RsmModel, data: &[LabeledMel]) -> Result<EmbeddingEval> {
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, u) in data.iter().enumerate() {
        by_speaker.entry(u.speaker).or_default().push(i);
    }
    if by_speaker.len() < 2 {
        return Err(RsmError::InvalidInput(format!(
            "evaluation needs at least 2 speakers, got {}",
            by_speaker.len()
        )));
    }
    if let Some((s, v)) = by_speaker.iter().find(|(_, v)| v.len() < 2) {
        return Err(RsmError::InvalidInput(format!(
            "speaker {s} has {} utterance(s); at least 2 are required",
            v.len()
        )));
    }
    let embeddings = data
        .iter()
        .map(|u| Ok(model.forward(&u.mel)?.embedding))
        .collect::<Result<Vec<_>>>()?;
    let d = model.config.d_s;
    let sums: BTreeMap<usize, Vec<f64>> = by_speaker
        .iter()
        .map(|(s, idx)| {
            let mut acc = vec![0.0; d];
            idx.iter().for_each(|&i| axpy(1.0, &embeddings[i], &mut acc));
            (*s, acc)
        })
        .collect();

    let mut correct = 0usize;
    for (i, u) in data.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (s, sum) in &sums {
            let mut c = sum.clone();
            if *s == u.speaker {
                axpy(-1.0, &embeddings[i], &mut c);
            }
            let sim = cosine_similarity(&embeddings[i], &c);
            if sim > best.0 {
                best = (sim, *s);
            }
        }
        correct += usize::from(best.1 == u.speaker);
    }

    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            let c = cosine_similarity(&embeddings[i], &embeddings[j]);
            if data[i].speaker == data[j].speaker {
                same += c;
                n_same += 1;
            } else {
                diff += c;
                n_diff += 1;
            }
        }
    }
    let same_similarity = same / n_same as f64;
    let different_similarity = diff / n_diff as f64;
    Ok(EmbeddingEval {
        accuracy: correct as f64 / data.len() as f64,
        same_similarity,
        different_similarity,
        gap: same_similarity - different_similarity,
        num_speakers: by_speaker.len(),
        num_utterances: data.len(),
    })
}

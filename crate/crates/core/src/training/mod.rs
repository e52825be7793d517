//! Synthetic corpus generation, the desk-scale training loop and embedding evaluation.

mod corpus;
mod evaluate;
mod train;

pub use corpus::{gen_corpus, slice_segment, Corpus, CorpusConfig, SyntheticSpeaker, Utterance, CORPUS_INDEX};
pub use evaluate::{evaluate_embeddings, EmbeddingEval};
pub use train::{
    metrics_jsonl, prepare_mels, supervised_contrastive, train, ClassifierHead, LabeledMel, LossKind, StepRecord,
    TrainConfig, TrainOutcome,
};

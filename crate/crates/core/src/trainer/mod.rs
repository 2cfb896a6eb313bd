//! Self-contained desk-scale reference trainer: synthetic corpora with
//! canary injection, two tiny autoregressive model families, mini-batch SGD
//! with exact epoch-boundary loss traces, reweighted continuation,
//! leave-one-out stability estimation, and influence sums.

pub mod corpus;
pub mod influence;
pub mod model;
pub mod stability;
pub mod train;

pub use corpus::{
    inject_canaries, synthesize_corpus, CanaryGroup, Corpus, CorpusSample, Split,
    SyntheticCorpusSpec, Token,
};
pub use influence::influence_sums;
pub use model::{greedy_decode, ConvexLm, LanguageModel, ModelFamily, ModelKind, TinyRnn};
pub use stability::{loo_stability_estimate, LooEstimate};
pub use train::{
    evaluate_losses, generalization_gap, replay, train, StepSchedule, TrainConfig, TrainOutput,
};

//! Crate-wide error type.

/// Errors produced anywhere in the pipeline. Variants carry enough context
/// (cell coordinates, line/byte offsets) to diagnose bad inputs directly.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("negative loss {loss} at epoch {epoch}, sample {sample_id:?}")]
    NegativeLoss {
        epoch: usize,
        sample_id: String,
        loss: f64,
    },

    #[error("non-finite loss at epoch {epoch}, sample {sample_id:?}")]
    NonFiniteLoss { epoch: usize, sample_id: String },

    #[error("epoch index {0} must be >= 1")]
    BadEpochIndex(usize),

    #[error("unknown sample id {sample_id:?}: schema is locked to {known} samples")]
    UnknownSample { sample_id: String, known: usize },

    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),

    #[error("epoch {epoch} is incomplete: {present} of {expected} cells present")]
    IncompleteEpoch {
        epoch: usize,
        present: usize,
        expected: usize,
    },

    #[error("trace needs at least 2 epochs, got {0}")]
    TooFewEpochs(usize),

    #[error("trace has no samples")]
    NoSamples,

    #[error("bad epoch range {from}..={to} for a trace with {epochs} epochs (slices must keep >= 2 epochs)")]
    BadRange {
        from: usize,
        to: usize,
        epochs: usize,
    },

    #[error("malformed trace at {location}: {reason}")]
    Malformed { location: String, reason: String },

    #[error("binary emit requires a complete trace; {missing} cells are marked missing")]
    IncompleteBinaryEmit { missing: usize },

    #[error("burn-in {burn_in} must satisfy 1 <= burn-in < epochs ({epochs})")]
    BadBurnIn { burn_in: usize, epochs: usize },

    #[error("sample {sample_id:?} has no covered cells in the requested window")]
    NoCoverage { sample_id: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("plan removes every sample; nothing left to train on")]
    EmptyPlan,

    #[error("plan covers {plan} samples but the corpus has {corpus} train samples")]
    PlanMismatch { plan: usize, corpus: usize },

    #[error("training diverged at epoch {epoch}: mean loss {mean_loss:.4} exceeds {factor}x the initial {initial:.4}")]
    Divergence {
        epoch: usize,
        mean_loss: f64,
        initial: f64,
        factor: f64,
    },

    #[error("no canaries registered in the corpus")]
    NoCanaries,

    #[error("parameter snapshots required but absent (enable snapshot recording)")]
    MissingSnapshots,

    #[error("could not generate a non-colliding canary after {attempts} attempts (vocabulary too small?)")]
    CanaryCollision { attempts: usize },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

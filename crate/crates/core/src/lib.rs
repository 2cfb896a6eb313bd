//! Training-dynamics cartography for generative-model corpora.
//!
//! The pipeline: record an epoch-sample loss matrix ([`trace`]), score each
//! sample's difficulty and memorization and partition the corpus into four
//! quadrants ([`cartography`]), turn the map into a reweighting plan
//! ([`intervention`]), train or retrain a desk-scale reference model under
//! that plan ([`trainer`]), and measure the privacy/quality effect
//! ([`audit`]).
//!
//! The analysis core is generic over the scalar type via [`scalar::Scalar`];
//! the `*64` aliases below are the concrete types the trainer, the audits,
//! and the CLI work with.

pub mod audit;
pub mod cartography;
pub mod error;
pub mod intervention;
pub mod scalar;
pub mod stats;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 loss matrix, the on-disk cell type.
pub type LossTrace64 = trace::LossTrace<f64>;
pub type TraceBuilder64 = trace::TraceBuilder<f64>;
pub type CartographyConfig64 = cartography::CartographyConfig<f64>;
pub type CartographyMap64 = cartography::CartographyMap<f64>;
pub type InterventionPolicy64 = intervention::InterventionPolicy<f64>;
pub type SamplingPlan64 = intervention::SamplingPlan<f64>;

/// f32 variants for callers that analyze large external traces in reduced
/// precision.
pub type LossTrace32 = trace::LossTrace<f32>;
pub type TraceBuilder32 = trace::TraceBuilder<f32>;
pub type CartographyConfig32 = cartography::CartographyConfig<f32>;
pub type CartographyMap32 = cartography::CartographyMap<f32>;

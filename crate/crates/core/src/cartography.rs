//! Difficulty/memorization scoring, percentile thresholds, and the
//! four-quadrant partition of a training corpus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::LossTrace;

/// How the forget-event threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum EpsilonMode<F> {
    /// Use this value verbatim.
    Absolute(F),
    /// Minimum present cell of the trace plus this margin.
    RelativeMargin(F),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartographyConfig<F> {
    /// Number of initial epochs the difficulty score averages over.
    pub burn_in: usize,
    pub epsilon: EpsilonMode<F>,
    /// Percentile (0,1) for the difficulty threshold.
    pub alpha_d: F,
    /// Percentile (0,1) for the memorization threshold.
    pub alpha_m: F,
    /// Samples with present-cell coverage below this fraction are excluded
    /// from percentile fitting (they still get scores and quadrants).
    pub min_coverage: f64,
}

impl<F: Scalar> Default for CartographyConfig<F> {
    fn default() -> Self {
        Self {
            burn_in: 1,
            epsilon: EpsilonMode::RelativeMargin(F::from_f64_cell(0.5)),
            alpha_d: F::from_f64_cell(0.75),
            alpha_m: F::from_f64_cell(0.75),
            min_coverage: 0.5,
        }
    }
}

impl<F: Scalar> CartographyConfig<F> {
    pub fn validate(&self, trace: &LossTrace<F>) -> Result<()> {
        if self.burn_in < 1 || self.burn_in >= trace.epochs() {
            return Err(Error::BadBurnIn {
                burn_in: self.burn_in,
                epochs: trace.epochs(),
            });
        }
        let eps = match self.epsilon {
            EpsilonMode::Absolute(v) | EpsilonMode::RelativeMargin(v) => v,
        };
        if !eps.is_finite() || eps < F::zero() {
            return Err(Error::InvalidConfig("epsilon must be finite and >= 0".into()));
        }
        for (name, a) in [("alpha_d", self.alpha_d), ("alpha_m", self.alpha_m)] {
            if !(a > F::zero() && a < F::one()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie strictly inside (0,1)"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(Error::InvalidConfig("min_coverage must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Quadrant labels. The indices double as the intervention route:
/// 0 kept, 1 up-sampled, 2 down-weighted, 3 removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Quadrant {
    StableEasy = 0,
    AmbiguousHard = 1,
    HotspotMemorized = 2,
    NoisyOutlier = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::StableEasy,
        Quadrant::AmbiguousHard,
        Quadrant::HotspotMemorized,
        Quadrant::NoisyOutlier,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::StableEasy => "stable-easy",
            Quadrant::AmbiguousHard => "ambiguous-hard",
            Quadrant::HotspotMemorized => "hotspot-memorized",
            Quadrant::NoisyOutlier => "noisy-outlier",
        }
    }

    pub fn from_index(i: u8) -> Option<Quadrant> {
        Quadrant::ALL.get(i as usize).copied()
    }

    /// Threshold rule: the boundary (d = tau_d, m = tau_m) belongs to the
    /// `<=` side, so a sample exactly on both thresholds is stable-easy.
    pub fn classify<F: Scalar>(d: F, m: F, tau_d: F, tau_m: F) -> Quadrant {
        match (d <= tau_d, m <= tau_m) {
            (true, true) => Quadrant::StableEasy,
            (false, true) => Quadrant::AmbiguousHard,
            (true, false) => Quadrant::HotspotMemorized,
            (false, false) => Quadrant::NoisyOutlier,
        }
    }
}

impl Serialize for Quadrant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Quadrant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let i = u8::deserialize(d)?;
        Quadrant::from_index(i)
            .ok_or_else(|| serde::de::Error::custom(format!("quadrant index {i} out of range")))
    }
}

/// Mean loss over the burn-in window `1..=burn_in` for every sample.
///
/// Missing cells are filled by last observation carried forward; a sample
/// whose burn-in window has no covered cell at all is an error. Single pass,
/// O(burn_in * N).
pub fn difficulty_scores<F: Scalar>(trace: &LossTrace<F>, burn_in: usize) -> Result<Vec<F>> {
    if burn_in < 1 || burn_in >= trace.epochs() {
        return Err(Error::BadBurnIn {
            burn_in,
            epochs: trace.epochs(),
        });
    }
    let n = trace.samples();
    let mut last: Vec<Option<F>> = vec![None; n];
    let mut sums = vec![F::zero(); n];
    let mut counts = vec![0usize; n];
    for t in 1..=burn_in {
        for i in 0..n {
            if let Some(v) = trace.get(t, i) {
                last[i] = Some(v);
            }
            if let Some(v) = last[i] {
                sums[i] += v;
                counts[i] += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if counts[i] == 0 {
            return Err(Error::NoCoverage {
                sample_id: trace.sample_ids()[i].clone(),
            });
        }
        out.push(sums[i] / F::from_usize(counts[i]).unwrap());
    }
    Ok(out)
}

/// Fraction of epoch transitions where a sample's loss crosses from
/// strictly below `epsilon` to strictly above it.
///
/// Cells exactly equal to `epsilon` trigger nothing. Missing cells use the
/// last observation carried forward; transitions are only counted when both
/// endpoints are defined. Single pass, O(T * N).
pub fn memorization_scores<F: Scalar>(trace: &LossTrace<F>, epsilon: F) -> Result<Vec<F>> {
    if !epsilon.is_finite() || epsilon < F::zero() {
        return Err(Error::InvalidConfig("epsilon must be finite and >= 0".into()));
    }
    let n = trace.samples();
    let denom = F::from_usize(trace.epochs() - 1).unwrap();
    let mut prev: Vec<Option<F>> = vec![None; n];
    let mut events = vec![0u32; n];
    for t in 1..=trace.epochs() {
        for i in 0..n {
            let eff = match trace.get(t, i) {
                Some(v) => Some(v),
                None => prev[i],
            };
            if t > 1 {
                if let (Some(before), Some(after)) = (prev[i], eff) {
                    if before < epsilon && after > epsilon {
                        events[i] += 1;
                    }
                }
            }
            prev[i] = eff;
        }
    }
    Ok(events
        .into_iter()
        .map(|e| F::from_u32(e).unwrap() / denom)
        .collect())
}

/// Resolves the configured epsilon against a trace: absolute mode returns
/// the value verbatim, relative mode adds the margin to the minimum present
/// cell.
pub fn resolve_epsilon<F: Scalar>(trace: &LossTrace<F>, config: &CartographyConfig<F>) -> Result<F> {
    match config.epsilon {
        EpsilonMode::Absolute(v) => Ok(v),
        EpsilonMode::RelativeMargin(margin) => {
            let min = trace
                .min_cell()
                .ok_or(Error::EmptyInput("trace has no present cells"))?;
            Ok(min + margin)
        }
    }
}

/// Nearest-rank percentile: sort ascending and return the element at
/// 1-based index `ceil(alpha * N)`, clamped to `[1, N]`. The result is
/// always an attained value of the input.
pub fn percentile_threshold<F: Scalar>(values: &[F], alpha: F) -> Result<F> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile over empty array"));
    }
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(Error::InvalidConfig(
            "percentile alpha must lie strictly inside (0,1)".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(
            "percentile input must be finite".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let rank = (alpha * F::from_usize(n).unwrap()).ceil();
    let rank = rank.to_usize().unwrap_or(1).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Applies the quadrant rule elementwise. Panics if the arrays disagree in
/// length (caller bug, not input error).
pub fn partition<F: Scalar>(d: &[F], m: &[F], tau_d: F, tau_m: F) -> Vec<Quadrant> {
    assert_eq!(d.len(), m.len(), "score arrays must have equal length");
    d.iter()
        .zip(m)
        .map(|(&di, &mi)| Quadrant::classify(di, mi, tau_d, tau_m))
        .collect()
}

/// Per-sample cartography entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCartography<F> {
    pub sample_id: String,
    pub d: F,
    pub m: F,
    pub quadrant: Quadrant,
    pub coverage: f64,
}

/// Full result of a cartography pass: scores, thresholds, and quadrants,
/// plus the resolved configuration for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartographyMap<F> {
    pub version: u32,
    pub config: CartographyConfig<F>,
    pub epochs: usize,
    pub epsilon_resolved: F,
    pub tau_d: F,
    pub tau_m: F,
    pub quadrant_counts: [usize; 4],
    /// Sample ids excluded from percentile fitting for low coverage.
    pub excluded_low_coverage: Vec<String>,
    /// True when the memorization threshold degenerated to zero (every
    /// m > 0 sample becomes a hotspot).
    pub tau_m_is_zero: bool,
    pub samples: Vec<SampleCartography<F>>,
}

impl<F: Scalar> CartographyMap<F> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn quadrant_of(&self, sample_id: &str) -> Option<Quadrant> {
        self.samples
            .iter()
            .find(|s| s.sample_id == sample_id)
            .map(|s| s.quadrant)
    }

    pub fn to_json(&self) -> Result<String>
    where
        F: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self>
    where
        F: serde::de::DeserializeOwned,
    {
        Ok(serde_json::from_str(json)?)
    }
}

/// End-to-end cartography: resolve epsilon, score every sample, fit the
/// percentile thresholds on sufficiently covered samples, and partition.
/// Deterministic; O(T*N + N log N).
pub fn build_map<F: Scalar>(
    trace: &LossTrace<F>,
    config: &CartographyConfig<F>,
) -> Result<CartographyMap<F>> {
    config.validate(trace)?;
    let epsilon = resolve_epsilon(trace, config)?;
    let d = difficulty_scores(trace, config.burn_in)?;
    let m = memorization_scores(trace, epsilon)?;

    let n = trace.samples();
    let coverage: Vec<f64> = (0..n).map(|i| trace.coverage(i)).collect();
    let included: Vec<usize> = (0..n)
        .filter(|&i| coverage[i] >= config.min_coverage)
        .collect();
    if included.is_empty() {
        return Err(Error::InvalidConfig(
            "no sample has enough coverage to fit thresholds".into(),
        ));
    }
    let d_fit: Vec<F> = included.iter().map(|&i| d[i]).collect();
    let m_fit: Vec<F> = included.iter().map(|&i| m[i]).collect();
    let tau_d = percentile_threshold(&d_fit, config.alpha_d)?;
    let tau_m = percentile_threshold(&m_fit, config.alpha_m)?;

    let quadrants = partition(&d, &m, tau_d, tau_m);
    let mut counts = [0usize; 4];
    for q in &quadrants {
        counts[q.index()] += 1;
    }
    let excluded_low_coverage = (0..n)
        .filter(|&i| coverage[i] < config.min_coverage)
        .map(|i| trace.sample_ids()[i].clone())
        .collect();
    let samples = (0..n)
        .map(|i| SampleCartography {
            sample_id: trace.sample_ids()[i].clone(),
            d: d[i],
            m: m[i],
            quadrant: quadrants[i],
            coverage: coverage[i],
        })
        .collect();
    Ok(CartographyMap {
        version: 1,
        config: *config,
        epochs: trace.epochs(),
        epsilon_resolved: epsilon,
        tau_d,
        tau_m,
        quadrant_counts: counts,
        excluded_low_coverage,
        tau_m_is_zero: tau_m == F::zero(),
        samples,
    })
}

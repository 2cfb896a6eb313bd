//! From a cartography map to a concrete sampling/weighting plan, plus the
//! stability-based generalization-gap bound.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cartography::{CartographyMap, Quadrant};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether sample weights act on the sampling distribution or multiply the
/// loss/gradient of uniformly drawn samples. The two are mutually exclusive
/// by construction: a plan carries exactly one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    SamplingProbability,
    LossMultiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionPolicy<F> {
    /// Up-sampling factor for ambiguous-hard samples, > 1.
    pub gamma: F,
    /// Down-weight factor for hotspot-memorized samples, in [0,1).
    pub alpha_down: F,
    /// Drop noisy-outlier samples entirely.
    pub remove_noisy: bool,
    pub mode: WeightMode,
}

impl<F: Scalar> Default for InterventionPolicy<F> {
    fn default() -> Self {
        Self {
            gamma: F::from_f64_cell(2.0),
            alpha_down: F::from_f64_cell(0.5),
            remove_noisy: true,
            mode: WeightMode::SamplingProbability,
        }
    }
}

impl<F: Scalar> InterventionPolicy<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > F::one()) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig("gamma must be > 1".into()));
        }
        if !(self.alpha_down >= F::zero() && self.alpha_down < F::one()) {
            return Err(Error::InvalidConfig("alpha_down must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Per-sample weight entry of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry<F> {
    pub sample_id: String,
    pub weight: F,
    pub probability: F,
    pub removed: bool,
}

/// Concrete reweighting plan: per-sample weights, the removal set, and the
/// normalized sampling distribution over retained samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan<F> {
    pub version: u32,
    pub mode: WeightMode,
    pub samples: Vec<PlanEntry<F>>,
    pub removed: BTreeSet<String>,
    /// Total pruned weight: sum over down-weighted samples of (1 - factor)
    /// plus one per removed sample.
    pub delta_alpha_total: F,
    /// Weight decrease applied to each individual hotspot sample.
    pub delta_alpha_per_example: F,
    /// Number of hotspot-memorized samples the plan touches.
    pub n_hot: usize,
    /// Up-sampling factor actually applied (after the probability cap).
    pub gamma_effective: F,
}

impl<F: Scalar> SamplingPlan<F> {
    /// Uniform plan over the given samples: the explicit no-op intervention.
    pub fn uniform(sample_ids: &[String]) -> Result<Self> {
        Self::from_weights(
            sample_ids,
            &vec![F::one(); sample_ids.len()],
            WeightMode::SamplingProbability,
            F::zero(),
            0,
            F::one(),
        )
    }

    fn from_weights(
        sample_ids: &[String],
        weights: &[F],
        mode: WeightMode,
        delta_alpha_per_example: F,
        n_hot: usize,
        gamma_effective: F,
    ) -> Result<Self> {
        assert_eq!(sample_ids.len(), weights.len());
        if sample_ids.is_empty() {
            return Err(Error::EmptyInput("plan over zero samples"));
        }
        let total: F = weights.iter().copied().sum();
        if !(total > F::zero()) {
            return Err(Error::EmptyPlan);
        }
        let mut removed = BTreeSet::new();
        let mut delta_alpha_total = F::zero();
        let mut samples = Vec::with_capacity(sample_ids.len());
        for (id, &w) in sample_ids.iter().zip(weights) {
            let is_removed = w == F::zero();
            if is_removed {
                removed.insert(id.clone());
                delta_alpha_total += F::one();
            } else if w < F::one() {
                delta_alpha_total += F::one() - w;
            }
            samples.push(PlanEntry {
                sample_id: id.clone(),
                weight: w,
                probability: w / total,
                removed: is_removed,
            });
        }
        Ok(Self {
            version: 1,
            mode,
            samples,
            removed,
            delta_alpha_total,
            delta_alpha_per_example,
            n_hot,
            gamma_effective,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.sample_id.as_str())
    }

    pub fn weights(&self) -> Vec<F> {
        self.samples.iter().map(|s| s.weight).collect()
    }

    pub fn probabilities(&self) -> Vec<F> {
        self.samples.iter().map(|s| s.probability).collect()
    }

    pub fn retained(&self) -> usize {
        self.samples.len() - self.removed.len()
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

/// Probability cap for up-sampled samples on non-tiny corpora.
const UPSAMPLE_PROB_CAP: f64 = 0.05;
const CAP_MIN_SAMPLES: usize = 20;

/// Turns a quadrant map into per-sample weights:
/// stable-easy 1, ambiguous-hard gamma, hotspot-memorized alpha_down,
/// noisy-outlier 0 (if `remove_noisy`) or 1.
///
/// On corpora of at least 20 samples gamma is capped so that no up-sampled
/// sample exceeds probability 0.05.
pub fn plan<F: Scalar>(
    map: &CartographyMap<F>,
    policy: &InterventionPolicy<F>,
) -> Result<SamplingPlan<F>> {
    policy.validate()?;
    let n = map.len();
    let quadrants: Vec<Quadrant> = map.samples.iter().map(|s| s.quadrant).collect();
    let noisy_weight = if policy.remove_noisy { F::zero() } else { F::one() };

    let weight_for = |q: Quadrant, gamma: F| match q {
        Quadrant::StableEasy => F::one(),
        Quadrant::AmbiguousHard => gamma,
        Quadrant::HotspotMemorized => policy.alpha_down,
        Quadrant::NoisyOutlier => noisy_weight,
    };

    let mut gamma = policy.gamma;
    if n >= CAP_MIN_SAMPLES {
        let upsampled = quadrants
            .iter()
            .filter(|q| **q == Quadrant::AmbiguousHard)
            .count();
        if upsampled > 0 {
            let others: F = quadrants
                .iter()
                .filter(|q| **q != Quadrant::AmbiguousHard)
                .map(|&q| weight_for(q, gamma))
                .sum();
            let cap = F::from_f64_cell(UPSAMPLE_PROB_CAP);
            let k = F::from_usize(upsampled).unwrap();
            let p_max = gamma / (others + k * gamma);
            if p_max > cap {
                // Solve gamma' / (others + k * gamma') = cap; breaching is
                // only possible when 1 - cap*k > 0. Up-sampling never drops
                // below the neutral weight.
                let solved = cap * others / (F::one() - cap * k);
                gamma = solved.max(F::one()).min(policy.gamma);
            }
        }
    }

    let weights: Vec<F> = quadrants.iter().map(|&q| weight_for(q, gamma)).collect();
    let n_hot = quadrants
        .iter()
        .filter(|q| **q == Quadrant::HotspotMemorized)
        .count();
    let ids: Vec<String> = map.samples.iter().map(|s| s.sample_id.clone()).collect();
    SamplingPlan::from_weights(
        &ids,
        &weights,
        policy.mode,
        F::one() - policy.alpha_down,
        n_hot,
        gamma,
    )
}

/// Removal plan over the top `fraction` of samples ranked by descending
/// memorization score (ties broken by map order): `round(fraction * N)`
/// samples get weight zero. This is the pruning used in the sweep.
pub fn prune_top_fraction<F: Scalar>(
    map: &CartographyMap<F>,
    fraction: f64,
) -> Result<SamplingPlan<F>> {
    downweight_top_fraction(map, fraction, F::zero())
}

/// Like [`prune_top_fraction`] but assigns `weight` instead of removing;
/// weight zero removes outright.
pub fn downweight_top_fraction<F: Scalar>(
    map: &CartographyMap<F>,
    fraction: f64,
    weight: F,
) -> Result<SamplingPlan<F>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(
            "prune fraction must lie in [0,1]".into(),
        ));
    }
    if !(weight >= F::zero() && weight < F::one()) {
        return Err(Error::InvalidConfig(
            "down-weight must lie in [0,1)".into(),
        ));
    }
    let n = map.len();
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        map.samples[b]
            .m
            .partial_cmp(&map.samples[a].m)
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut weights = vec![F::one(); n];
    for &i in order.iter().take(k) {
        weights[i] = weight;
    }
    let ids: Vec<String> = map.samples.iter().map(|s| s.sample_id.clone()).collect();
    SamplingPlan::from_weights(
        &ids,
        &weights,
        WeightMode::SamplingProbability,
        F::one() - weight,
        k,
        F::one(),
    )
}

/// Lower bound on the expected generalization-gap reduction from removing
/// `delta_alpha` sampling weight from each of `n_hot` hotspot samples under
/// a `beta`-uniformly-stable trainer: `2 * beta * delta_alpha * n_hot`.
pub fn stability_gap_bound<F: Scalar>(beta: F, delta_alpha: F, n_hot: usize) -> F {
    assert!(beta >= F::zero(), "beta must be >= 0");
    assert!(delta_alpha >= F::zero(), "delta_alpha must be >= 0");
    F::from_f64_cell(2.0) * beta * delta_alpha * F::from_usize(n_hot).unwrap()
}

/// Cumulative-weight table for inverse-CDF sampling. One uniform draw per
/// sample, so two weight vectors that are elementwise equal consume an RNG
/// identically.
#[derive(Debug, Clone)]
pub struct CumulativeWeights {
    cumulative: Vec<f64>,
    total: f64,
}

impl CumulativeWeights {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("sampler over zero weights"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidConfig(
                "sampling weights must be finite and >= 0".into(),
            ));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::EmptyPlan);
        }
        Ok(Self {
            cumulative,
            total: acc,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.total;
        // First index with cumulative weight strictly above the dart;
        // zero-weight entries own an empty interval and are never hit.
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Deterministic infinite stream of sample indices drawn by plan
/// probability.
#[derive(Debug)]
pub struct WeightedSampler {
    weights: CumulativeWeights,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn from_plan<F: Scalar>(plan: &SamplingPlan<F>, seed: u64) -> Result<Self> {
        let weights: Vec<f64> = plan.samples.iter().map(|s| s.weight.to_f64_cell()).collect();
        Ok(Self {
            weights: CumulativeWeights::new(&weights)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Iterator for WeightedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.weights.sample(&mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartography::{CartographyConfig, SampleCartography};

    fn map_with_quadrants(qs: &[Quadrant]) -> CartographyMap<f64> {
        let samples: Vec<SampleCartography<f64>> = qs
            .iter()
            .enumerate()
            .map(|(i, &q)| SampleCartography {
                sample_id: format!("s{i}"),
                d: 0.0,
                m: 0.0,
                quadrant: q,
                coverage: 1.0,
            })
            .collect();
        let mut counts = [0usize; 4];
        for q in qs {
            counts[q.index()] += 1;
        }
        CartographyMap {
            version: 1,
            config: CartographyConfig::default(),
            epochs: 2,
            epsilon_resolved: 0.0,
            tau_d: 0.0,
            tau_m: 0.0,
            quadrant_counts: counts,
            excluded_low_coverage: Vec::new(),
            tau_m_is_zero: true,
            samples,
        }
    }

    #[test]
    fn one_sample_per_quadrant_plan_arithmetic() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::AmbiguousHard,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let p = plan(&map, &InterventionPolicy::default()).unwrap();
        assert_eq!(p.weights(), vec![1.0, 2.0, 0.5, 0.0]);
        let probs = p.probabilities();
        assert!((probs[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!((probs[1] - 4.0 / 7.0).abs() < 1e-15);
        assert!((probs[2] - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(probs[3], 0.0);
        assert_eq!(p.n_hot, 1);
        // 0.5 down-weight on the hotspot plus one removed noisy sample.
        assert!((p.delta_alpha_total - 1.5).abs() < 1e-15);
        assert_eq!(p.removed.len(), 1);
        assert!(p.removed.contains("s3"));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::AmbiguousHard,
            Quadrant::AmbiguousHard,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let p = plan(&map, &InterventionPolicy::default()).unwrap();
        let sum: f64 = p.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_removed_is_an_empty_plan() {
        let map = map_with_quadrants(&[Quadrant::NoisyOutlier, Quadrant::NoisyOutlier]);
        let err = plan(&map, &InterventionPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPlan));
    }

    #[test]
    fn near_identity_policy_approaches_uniform() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::AmbiguousHard,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let policy = InterventionPolicy {
            gamma: 1.0 + 1e-9,
            alpha_down: 1.0 - 1e-9,
            remove_noisy: false,
            mode: WeightMode::SamplingProbability,
        };
        let p = plan(&map, &policy).unwrap();
        for prob in p.probabilities() {
            assert!((prob - 0.25).abs() < 1e-8);
        }
        assert!(p.removed.is_empty());
    }

    #[test]
    fn invalid_policies_rejected() {
        let map = map_with_quadrants(&[Quadrant::StableEasy]);
        for (gamma, alpha_down) in [(1.0, 0.5), (0.5, 0.5), (2.0, 1.0), (2.0, -0.1)] {
            let policy = InterventionPolicy {
                gamma,
                alpha_down,
                remove_noisy: true,
                mode: WeightMode::SamplingProbability,
            };
            assert!(plan(&map, &policy).is_err(), "({gamma},{alpha_down})");
        }
    }

    #[test]
    fn upsample_cap_kicks_in_on_larger_corpora() {
        // 19 stable + 1 ambiguous-hard: raw gamma=10 would give the
        // up-sampled sample probability 10/29 > 0.05.
        let mut qs = vec![Quadrant::StableEasy; 19];
        qs.push(Quadrant::AmbiguousHard);
        let map = map_with_quadrants(&qs);
        let policy = InterventionPolicy {
            gamma: 10.0,
            ..InterventionPolicy::default()
        };
        let p = plan(&map, &policy).unwrap();
        let max_prob = p
            .probabilities()
            .into_iter()
            .fold(0.0f64, f64::max);
        assert!(max_prob <= 0.05 + 1e-12, "max prob {max_prob}");
        assert!(p.gamma_effective < 10.0);

        // Below 20 samples the cap is not applied.
        let mut qs = vec![Quadrant::StableEasy; 3];
        qs.push(Quadrant::AmbiguousHard);
        let small = map_with_quadrants(&qs);
        let p = plan(&small, &policy).unwrap();
        assert_eq!(p.gamma_effective, 10.0);
    }

    #[test]
    fn delta_alpha_monotone_in_alpha_down_and_hotspot_count() {
        let map3 = map_with_quadrants(&[
            Quadrant::HotspotMemorized,
            Quadrant::HotspotMemorized,
            Quadrant::HotspotMemorized,
            Quadrant::StableEasy,
        ]);
        let map1 = map_with_quadrants(&[
            Quadrant::HotspotMemorized,
            Quadrant::StableEasy,
            Quadrant::StableEasy,
            Quadrant::StableEasy,
        ]);
        let mk = |alpha_down: f64| InterventionPolicy {
            alpha_down,
            remove_noisy: false,
            ..InterventionPolicy::default()
        };
        let mut prev = f64::INFINITY;
        for alpha_down in [0.0, 0.25, 0.5, 0.9] {
            let da = plan(&map3, &mk(alpha_down)).unwrap().delta_alpha_total;
            assert!(da <= prev);
            prev = da;
            let da1 = plan(&map1, &mk(alpha_down)).unwrap().delta_alpha_total;
            assert!(da1 <= da);
        }
    }

    #[test]
    fn bound_formula_and_linearity() {
        assert!((stability_gap_bound(0.1f64, 0.2, 5) - 0.2).abs() < 1e-15);
        assert_eq!(stability_gap_bound(0.0f64, 0.2, 5), 0.0);
        assert_eq!(stability_gap_bound(0.1f64, 0.0, 5), 0.0);
        assert_eq!(stability_gap_bound(0.1f64, 0.2, 0), 0.0);
        let base: f64 = stability_gap_bound(0.3, 0.7, 4);
        assert!((stability_gap_bound(0.6, 0.7, 4) - 2.0 * base).abs() < 1e-12);
        assert!((stability_gap_bound(0.3, 1.4, 4) - 2.0 * base).abs() < 1e-12);
        assert!((stability_gap_bound(0.3, 0.7, 8) - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn prune_top_fraction_removes_highest_m() {
        let mut map = map_with_quadrants(&[Quadrant::StableEasy; 5]);
        for (i, m) in [0.0, 0.8, 0.1, 0.9, 0.0].iter().enumerate() {
            map.samples[i].m = *m;
        }
        let p = prune_top_fraction(&map, 0.4).unwrap();
        assert_eq!(p.removed.len(), 2);
        assert!(p.removed.contains("s1"));
        assert!(p.removed.contains("s3"));
        assert_eq!(p.delta_alpha_per_example, 1.0);

        let noop = prune_top_fraction(&map, 0.0).unwrap();
        assert!(noop.removed.is_empty());
        assert_eq!(noop.weights(), vec![1.0; 5]);
    }

    #[test]
    fn sampler_is_deterministic_and_skips_removed() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::AmbiguousHard,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let p = plan(&map, &InterventionPolicy::default()).unwrap();
        let a: Vec<usize> = WeightedSampler::from_plan(&p, 7).unwrap().take(2000).collect();
        let b: Vec<usize> = WeightedSampler::from_plan(&p, 7).unwrap().take(2000).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i != 3), "removed sample must never be drawn");
    }

    #[test]
    fn uniform_sampler_frequencies_converge() {
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let p: SamplingPlan<f64> = SamplingPlan::uniform(&ids).unwrap();
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for i in WeightedSampler::from_plan(&p, 42).unwrap().take(draws) {
            counts[i] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn weighted_sampler_matches_plan_probabilities() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::AmbiguousHard,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let p = plan(&map, &InterventionPolicy::default()).unwrap();
        let expected = [2.0 / 7.0, 4.0 / 7.0, 1.0 / 7.0, 0.0];
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for i in WeightedSampler::from_plan(&p, 99).unwrap().take(draws) {
            counts[i] += 1;
        }
        // Chi-square over the three retained cells; 13.8 is the 0.999
        // quantile at df=2, doubled for slack.
        let mut chi2 = 0.0;
        for i in 0..3 {
            let e = expected[i] * draws as f64;
            let o = counts[i] as f64;
            chi2 += (o - e) * (o - e) / e;
        }
        assert!(chi2 < 27.6, "chi2 {chi2}");
        assert_eq!(counts[3], 0);
    }

    #[test]
    fn plan_round_trips_through_json() {
        let map = map_with_quadrants(&[
            Quadrant::StableEasy,
            Quadrant::HotspotMemorized,
            Quadrant::NoisyOutlier,
        ]);
        let p = plan(&map, &InterventionPolicy::default()).unwrap();
        let json = p.to_json().unwrap();
        let back: SamplingPlan<f64> = SamplingPlan::from_json(&json).unwrap();
        assert_eq!(back, p);
    }
}

//! Empirical leave-one-out stability estimation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::corpus::Corpus;
use super::model::LanguageModel;
use super::train::{evaluate_losses, train, TrainConfig};

#[derive(Debug, Clone)]
pub struct LooEstimate {
    /// Max observed loss deviation over all probes and replicas: an
    /// empirical lower estimate of the uniform-stability constant.
    pub beta_hat: f64,
    /// Per-replica max deviation, aligned with `left_out`.
    pub per_replica: Vec<f64>,
    /// Train positions that were left out.
    pub left_out: Vec<usize>,
}

/// Trains a base run plus `k` leave-one-out replicas that replay the base
/// run's sampling trajectory minus the removed index, then probes every
/// train and heldout sample for the largest loss deviation.
///
/// The trajectory replay isolates the removed datum's effect from sampling
/// noise. The returned value is a lower estimate: true uniform stability
/// maximizes over all datasets and probes, we only observe these.
pub fn loo_stability_estimate<M: LanguageModel + PartialEq>(
    init_model: &M,
    corpus: &Corpus,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<LooEstimate> {
    let train_idx = corpus.train_indices();
    if k == 0 || k > train_idx.len() {
        return Err(Error::InvalidConfig(format!(
            "probe count {k} must lie in 1..={}",
            train_idx.len()
        )));
    }
    let mut cfg = *config;
    cfg.record_trajectory = true;

    let mut base = init_model.clone();
    let base_out = train(&mut base, corpus, &cfg, None)?;
    let trajectory = base_out.trajectory.expect("trajectory recorded");

    // Probe every sample we have.
    let probes: Vec<usize> = (0..corpus.samples.len()).collect();
    let base_losses = evaluate_losses(&base, corpus, &probes);

    let mut positions: Vec<usize> = (0..train_idx.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positions.shuffle(&mut rng);
    positions.truncate(k);

    use rayon::prelude::*;
    let per_replica: Vec<f64> = positions
        .par_iter()
        .map(|&left_out| {
            let mut replica = init_model.clone();
            super::train::replay(&mut replica, corpus, &cfg, &trajectory, Some(left_out))?;
            let losses = evaluate_losses(&replica, corpus, &probes);
            let max_dev = base_losses
                .iter()
                .zip(&losses)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            Ok::<f64, Error>(max_dev)
        })
        .collect::<Result<Vec<f64>>>()?;

    let beta_hat = per_replica.iter().copied().fold(0.0f64, f64::max);
    Ok(LooEstimate {
        beta_hat,
        per_replica,
        left_out: positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::corpus::{Corpus, CorpusSample, Split};
    use crate::trainer::model::ConvexLm;
    use crate::trainer::train::StepSchedule;

    fn duplicate_corpus(n: usize) -> Corpus {
        let tokens = vec![1u32, 2, 3, 4, 5, 6, 7, 8];
        let mut samples: Vec<CorpusSample> = (0..n)
            .map(|i| CorpusSample {
                id: format!("dup-{i}"),
                split: Split::Train,
                tokens: tokens.clone(),
            })
            .collect();
        samples.push(CorpusSample {
            id: "h0".into(),
            split: Split::Heldout,
            tokens: tokens.clone(),
        });
        Corpus::new(16, samples).unwrap()
    }

    #[test]
    fn identical_sequences_make_removal_immaterial() {
        let corpus = duplicate_corpus(24);
        let init = ConvexLm::new(16, 2);
        let cfg = TrainConfig::new(6, 2, 5);
        let est = loo_stability_estimate(&init, &corpus, &cfg, 1, 3).unwrap();
        assert!(est.beta_hat < 0.01, "beta_hat {}", est.beta_hat);
    }

    #[test]
    fn zero_stepsize_gives_exactly_zero_beta() {
        let corpus = duplicate_corpus(10);
        let init = ConvexLm::new(16, 2);
        let cfg = TrainConfig {
            schedule: StepSchedule::Constant { eta: 0.0 },
            ..TrainConfig::new(4, 1, 5)
        };
        let est = loo_stability_estimate(&init, &corpus, &cfg, 2, 9).unwrap();
        assert_eq!(est.beta_hat, 0.0);
    }

    #[test]
    fn beta_hat_is_never_negative_and_probe_count_validated() {
        let corpus = duplicate_corpus(6);
        let init = ConvexLm::new(16, 2);
        let cfg = TrainConfig::new(3, 1, 5);
        let est = loo_stability_estimate(&init, &corpus, &cfg, 3, 1).unwrap();
        assert!(est.beta_hat >= 0.0);
        assert_eq!(est.per_replica.len(), 3);
        assert!(loo_stability_estimate(&init, &corpus, &cfg, 0, 1).is_err());
        assert!(loo_stability_estimate(&init, &corpus, &cfg, 99, 1).is_err());
    }
}

//! Per-sample influence proxy: cumulative squared gradient norm across
//! epoch snapshots.

use crate::error::{Error, Result};

use super::corpus::Corpus;
use super::model::LanguageModel;

/// For each train sample i, the sum over epoch-end snapshots t of
/// ||grad of loss(x_i) at snapshot t||^2. O(T * N * dim).
pub fn influence_sums<M: LanguageModel>(
    template: &M,
    snapshots: &[Vec<f64>],
    corpus: &Corpus,
) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::MissingSnapshots);
    }
    let dim = template.params().len();
    for s in snapshots {
        if s.len() != dim {
            return Err(Error::InvalidConfig(
                "snapshot dimension does not match the model".into(),
            ));
        }
    }
    let train_idx = corpus.train_indices();

    use rayon::prelude::*;
    let sums: Vec<f64> = train_idx
        .par_iter()
        .map(|&ci| {
            let tokens = &corpus.samples[ci].tokens;
            let mut model = template.clone();
            let mut grad = vec![0.0; dim];
            let mut total = 0.0;
            for snap in snapshots {
                model.params_mut().copy_from_slice(snap);
                grad.fill(0.0);
                model.accumulate_loss_grad(tokens, 1.0, &mut grad);
                total += grad.iter().map(|g| g * g).sum::<f64>();
            }
            total
        })
        .collect();
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::corpus::{Corpus, CorpusSample, Split};
    use crate::trainer::model::ConvexLm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus_with(sequences: Vec<Vec<u32>>) -> Corpus {
        let mut samples: Vec<CorpusSample> = sequences
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| CorpusSample {
                id: format!("t{i}"),
                split: Split::Train,
                tokens,
            })
            .collect();
        samples.push(CorpusSample {
            id: "h".into(),
            split: Split::Heldout,
            tokens: vec![0, 1],
        });
        Corpus::new(8, samples).unwrap()
    }

    fn random_snapshot(dim: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| (rng.random::<f64>() - 0.5) * scale).collect()
    }

    #[test]
    fn no_snapshots_is_an_error() {
        let corpus = corpus_with(vec![vec![1, 2, 3]]);
        let template = ConvexLm::new(8, 2);
        assert!(matches!(
            influence_sums(&template, &[], &corpus),
            Err(Error::MissingSnapshots)
        ));
    }

    #[test]
    fn duplicated_samples_have_identical_influence() {
        let corpus = corpus_with(vec![vec![1, 2, 3, 4], vec![1, 2, 3, 4], vec![5, 6, 7, 1]]);
        let template = ConvexLm::new(8, 2);
        let dim = template.params().len();
        let snaps = vec![
            random_snapshot(dim, 1, 0.6),
            random_snapshot(dim, 2, 0.6),
            random_snapshot(dim, 3, 0.6),
        ];
        let inf = influence_sums(&template, &snaps, &corpus).unwrap();
        assert_eq!(inf.len(), 3);
        assert_eq!(inf[0], inf[1]);
        assert_ne!(inf[0], inf[2]);
        assert!(inf.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn influence_matches_finite_difference_oracle() {
        // Independent route: squared norm of the central-difference
        // gradient at each snapshot.
        let corpus = corpus_with(vec![vec![3, 1, 4, 1, 5]]);
        let template = ConvexLm::new(8, 2);
        let dim = template.params().len();
        let snaps = vec![random_snapshot(dim, 7, 0.4), random_snapshot(dim, 8, 0.4)];
        let inf = influence_sums(&template, &snaps, &corpus).unwrap();

        let step = 1e-5;
        let tokens = corpus.samples[0].tokens.clone();
        let mut expected = 0.0;
        for snap in &snaps {
            let mut probe = template.clone();
            probe.params_mut().copy_from_slice(snap);
            let mut sq = 0.0;
            for i in 0..dim {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + step;
                let up = probe.sequence_loss(&tokens);
                probe.params_mut()[i] = orig - step;
                let down = probe.sequence_loss(&tokens);
                probe.params_mut()[i] = orig;
                let g = (up - down) / (2.0 * step);
                sq += g * g;
            }
            expected += sq;
        }
        let rel = (inf[0] - expected).abs() / expected.max(1e-12);
        assert!(rel < 1e-4, "influence {} vs oracle {expected}", inf[0]);
    }

    #[test]
    fn zero_gradient_sample_has_zero_influence() {
        // With all-zero snapshots the model is uniform; a sequence whose
        // empirical next-token distribution is exactly uniform over the
        // vocabulary would be needed for a strictly zero gradient, so use
        // the analytic fact instead: scaling snapshots to zero and
        // training nothing leaves the bias gradient nonzero for any real
        // sequence, hence we check the exact-zero case via a crafted
        // fixed point. A sequence repeating one token under a model that
        // already predicts it with probability one has zero gradient.
        let corpus = corpus_with(vec![vec![2, 2, 2, 2, 2, 2]]);
        let mut fitted = ConvexLm::new(8, 2);
        // Huge bias toward token 2 saturates softmax to ~1; residuals and
        // thus gradients underflow to exactly zero.
        let row_len = 8 * 2 + 1;
        fitted.params_mut()[2 * row_len + row_len - 1] = 800.0;
        let snaps = vec![fitted.params().to_vec()];
        let inf = influence_sums(&fitted, &snaps, &corpus).unwrap();
        assert_eq!(inf[0], 0.0);
    }
}

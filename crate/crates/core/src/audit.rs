//! Privacy and quality audits: canary extraction, loss-threshold membership
//! inference, perplexity, and pruning-fraction sweeps.

use serde::{Deserialize, Serialize};

use crate::cartography::CartographyConfig;
use crate::error::{Error, Result};
use crate::intervention::downweight_top_fraction;
use crate::stats::mann_whitney_auc;
use crate::trainer::{
    evaluate_losses, greedy_decode, train, Corpus, LanguageModel, Token, TrainConfig,
};

/// Outcome of the extraction attack on one canary group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryOutcome {
    pub group_id: String,
    pub prefix_len: usize,
    pub suffix_len: usize,
    /// Leading decoded tokens that matched the true suffix.
    pub matched_len: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Fraction of canary groups whose suffix greedy decoding reproduces
    /// exactly.
    pub extraction_success: f64,
    /// Loss-threshold membership-inference AUC (train vs heldout).
    pub mi_auc: f64,
    /// Heldout perplexity: exp of the mean per-token loss in nats.
    pub perplexity: f64,
    /// Extraction rate on heldout sequences that were duplicated into
    /// train, when the corpus carries such probes.
    pub heldout_leakage: Option<f64>,
    pub prefix_fraction: f64,
    pub decode: String,
    pub canaries: Vec<CanaryOutcome>,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn split_point(len: usize, prefix_fraction: f64) -> (usize, usize) {
    let raw = (prefix_fraction * len as f64).floor() as usize;
    let prefix = raw.clamp(1, len - 1);
    (prefix, len - prefix)
}

/// Conditions the model on a prefix of `tokens` and greedily decodes the
/// rest; returns (prefix length, matched length, exact-match flag).
pub fn try_extract<M: LanguageModel>(
    model: &M,
    tokens: &[Token],
    prefix_fraction: f64,
) -> (usize, usize, bool) {
    let (prefix_len, suffix_len) = split_point(tokens.len(), prefix_fraction);
    let decoded = greedy_decode(model, &tokens[..prefix_len], suffix_len);
    let truth = &tokens[prefix_len..];
    let matched = decoded
        .iter()
        .zip(truth)
        .take_while(|(a, b)| a == b)
        .count();
    (prefix_len, matched, matched == suffix_len)
}

/// Exact-suffix-match extraction attack over every canary group.
pub fn extraction_attack<M: LanguageModel>(
    model: &M,
    corpus: &Corpus,
    prefix_fraction: f64,
) -> Result<(f64, Vec<CanaryOutcome>)> {
    if corpus.canaries.is_empty() {
        return Err(Error::NoCanaries);
    }
    if !(prefix_fraction > 0.0 && prefix_fraction < 1.0) {
        return Err(Error::InvalidConfig(
            "prefix fraction must lie strictly inside (0,1)".into(),
        ));
    }
    let mut outcomes = Vec::with_capacity(corpus.canaries.len());
    let mut successes = 0usize;
    for group in &corpus.canaries {
        let (prefix_len, matched, success) = try_extract(model, &group.tokens, prefix_fraction);
        if success {
            successes += 1;
        }
        outcomes.push(CanaryOutcome {
            group_id: group.group_id.clone(),
            prefix_len,
            suffix_len: group.tokens.len() - prefix_len,
            matched_len: matched,
            success,
        });
    }
    Ok((successes as f64 / corpus.canaries.len() as f64, outcomes))
}

/// AUC of the loss-threshold attack: rank all samples by negative loss
/// (lower loss reads as "member") and compute the Mann-Whitney statistic
/// with ties counted half.
pub fn membership_inference_auc(member_losses: &[f64], nonmember_losses: &[f64]) -> Result<f64> {
    if member_losses.is_empty() || nonmember_losses.is_empty() {
        return Err(Error::EmptyInput("membership inference needs both sets"));
    }
    let member_scores: Vec<f64> = member_losses.iter().map(|l| -l).collect();
    let nonmember_scores: Vec<f64> = nonmember_losses.iter().map(|l| -l).collect();
    Ok(mann_whitney_auc(&member_scores, &nonmember_scores))
}

/// exp of the mean per-token negative log-likelihood over the given
/// samples. Token counts weight the mean, so long sequences count more.
pub fn perplexity<M: LanguageModel>(
    model: &M,
    corpus: &Corpus,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("perplexity over zero sequences"));
    }
    let losses = evaluate_losses(model, corpus, indices);
    let mut nats = 0.0;
    let mut tokens = 0usize;
    for (&i, loss) in indices.iter().zip(&losses) {
        let len = corpus.samples[i].tokens.len();
        nats += loss * len as f64;
        tokens += len;
    }
    Ok((nats / tokens as f64).exp())
}

/// Full audit of a trained model against its corpus: canary extraction,
/// train-vs-heldout membership inference, heldout perplexity, and the
/// leakage probe when present.
pub fn run_audit<M: LanguageModel>(
    model: &M,
    corpus: &Corpus,
    prefix_fraction: f64,
) -> Result<AuditReport> {
    let (extraction_success, canaries) = extraction_attack(model, corpus, prefix_fraction)?;
    let train_idx = corpus.train_indices();
    let heldout_idx = corpus.heldout_indices();
    if heldout_idx.is_empty() {
        return Err(Error::EmptyInput("audit needs a heldout split"));
    }
    let member_losses = evaluate_losses(model, corpus, &train_idx);
    let nonmember_losses = evaluate_losses(model, corpus, &heldout_idx);
    let mi_auc = membership_inference_auc(&member_losses, &nonmember_losses)?;
    let ppl = perplexity(model, corpus, &heldout_idx)?;

    let heldout_leakage = if corpus.leaked_heldout.is_empty() {
        None
    } else {
        let mut hits = 0usize;
        for id in &corpus.leaked_heldout {
            let sample = corpus
                .sample_by_id(id)
                .ok_or_else(|| Error::Corpus(format!("leaked heldout id {id:?} not found")))?;
            let (_, _, success) = try_extract(model, &sample.tokens, prefix_fraction);
            if success {
                hits += 1;
            }
        }
        Some(hits as f64 / corpus.leaked_heldout.len() as f64)
    };

    Ok(AuditReport {
        extraction_success,
        mi_auc,
        perplexity: ppl,
        heldout_leakage,
        prefix_fraction,
        decode: "greedy".into(),
        canaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub extraction_success: f64,
    pub perplexity_delta_pct: f64,
}

/// One seed's sweep: the baseline (fraction 0 of the grid, or a dedicated
/// baseline run) plus an audit per fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub seed: u64,
    pub baseline: AuditReport,
    pub audits: Vec<(f64, AuditReport)>,
}

/// Extraction/perplexity trade-off curve over a pruning grid, averaged
/// across seeds, with the per-seed detail retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub per_seed: Vec<SeedSweep>,
}

impl SweepCurve {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Flat CSV: `fraction,extraction,perplexity_delta_pct`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,extraction,perplexity_delta_pct\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                p.fraction, p.extraction_success, p.perplexity_delta_pct
            ));
        }
        out
    }
}

/// For each pruning fraction: rank train samples by descending memorization
/// score from a baseline run, remove (or down-weight to `down_weight`) the
/// top `fraction`, retrain with the same seed (identical up to the burn-in
/// point), audit, and average over seeds. Seeds run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn prune_sweep<M: LanguageModel + PartialEq>(
    init_model: &M,
    corpus: &Corpus,
    train_config: &TrainConfig,
    carto_config: &CartographyConfig<f64>,
    fractions: &[f64],
    seeds: &[u64],
    prefix_fraction: f64,
    down_weight: f64,
) -> Result<SweepCurve> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::EmptyInput("sweep needs fractions and seeds"));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1])
        || fractions.iter().any(|f| !(0.0..=1.0).contains(f))
    {
        return Err(Error::InvalidConfig(
            "fractions must be strictly increasing within [0,1]".into(),
        ));
    }

    use rayon::prelude::*;
    let per_seed: Vec<SeedSweep> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = *train_config;
            cfg.seed = seed;
            let mut baseline_model = init_model.clone();
            let baseline_out = train(&mut baseline_model, corpus, &cfg, None)?;
            let baseline = run_audit(&baseline_model, corpus, prefix_fraction)?;
            let map = crate::cartography::build_map(&baseline_out.trace, carto_config)?;

            let audits = fractions
                .par_iter()
                .map(|&fraction| {
                    let plan = downweight_top_fraction(&map, fraction, down_weight)?;
                    let mut model = init_model.clone();
                    train(&mut model, corpus, &cfg, Some(&plan))?;
                    let report = run_audit(&model, corpus, prefix_fraction)?;
                    Ok::<(f64, AuditReport), Error>((fraction, report))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok::<SeedSweep, Error>(SeedSweep {
                seed,
                baseline,
                audits,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let points = fractions
        .iter()
        .enumerate()
        .map(|(k, &fraction)| {
            let mut extraction = 0.0;
            let mut delta_pct = 0.0;
            for s in &per_seed {
                let (_, report) = &s.audits[k];
                extraction += report.extraction_success;
                delta_pct += 100.0 * (report.perplexity / s.baseline.perplexity - 1.0);
            }
            let n = per_seed.len() as f64;
            SweepPoint {
                fraction,
                extraction_success: extraction / n,
                perplexity_delta_pct: delta_pct / n,
            }
        })
        .collect();

    Ok(SweepCurve { points, per_seed })
}

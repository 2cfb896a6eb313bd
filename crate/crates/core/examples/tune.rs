//! Scratch probe for picking demo defaults. Not part of the deliverable.

use gendatacarto::audit::{extraction_attack, perplexity, run_audit};
use gendatacarto::cartography::{build_map, CartographyConfig, EpsilonMode};
use gendatacarto::intervention::prune_top_fraction;
use gendatacarto::stats::spearman;
use gendatacarto::trainer::{
    influence_sums, inject_canaries, synthesize_corpus, train, ConvexLm, LanguageModel,
    StepSchedule, SyntheticCorpusSpec, TrainConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let margin: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let canary_len: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(12);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1);
    let structured: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(48);
    let branching: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(4);
    let groups: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(10);
    let min_len: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(16);
    let max_len: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(24);
    let n_train: usize = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(1940);

    let spec = SyntheticCorpusSpec {
        structured_vocab: structured,
        branching,
        min_len,
        max_len,
        train_sequences: n_train,
        heldout_sequences: (n_train / 4).max(20),
        leak_count: (n_train / 65).min(30),
        ..SyntheticCorpusSpec::default()
    };
    let base = synthesize_corpus(&spec, seed).unwrap();
    let corpus = inject_canaries(&base, groups, canary_len, 3, seed ^ 0xc0ffee).unwrap();
    let n_train = corpus.train_indices().len();
    println!("train={} heldout={} canek groups={}", n_train, corpus.heldout_indices().len(), corpus.canaries.len());

    let cfg = TrainConfig {
        batch_size: batch,
        schedule: StepSchedule::Constant { eta },
        record_snapshots: true,
        ..TrainConfig::new(40, 8, seed)
    };
    let mut model = ConvexLm::new(spec.vocab_size, 3);
    let t0 = std::time::Instant::now();
    let out = train(&mut model, &corpus, &cfg, None).unwrap();
    println!("baseline train {:?}; init loss {:.3}, final {:.3}", t0.elapsed(), out.initial_mean_loss, out.epoch_mean_losses.last().unwrap());

    let (extr, _) = extraction_attack(&model, &corpus, 0.5).unwrap();
    let ppl = perplexity(&model, &corpus, &corpus.heldout_indices()).unwrap();
    println!("baseline extraction={extr:.2} heldout ppl={ppl:.3}");

    // Cartography with relative epsilon.
    let carto = CartographyConfig {
        burn_in: 8,
        epsilon: EpsilonMode::RelativeMargin(margin),
        ..CartographyConfig::default()
    };
    let map = build_map(&out.trace, &carto).unwrap();
    println!("epsilon={:.4} tau_d={:.4} tau_m={:.4} counts={:?}", map.epsilon_resolved, map.tau_d, map.tau_m, map.quadrant_counts);

    // Where do canaries rank by m?
    let mut canary_m = Vec::new();
    let mut other_m_pos = 0usize;
    let mut m_positive = 0usize;
    for s in &map.samples {
        if s.m > 0.0 {
            m_positive += 1;
            if !s.sample_id.starts_with("canary") {
                other_m_pos += 1;
            }
        }
        if s.sample_id.starts_with("canary") {
            canary_m.push((s.sample_id.clone(), s.d, s.m));
        }
    }
    println!("m>0 samples: {m_positive} (non-canary: {other_m_pos})");
    let mean_canary_m: f64 = canary_m.iter().map(|c| c.2).sum::<f64>() / canary_m.len() as f64;
    let min_canary_m = canary_m.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    println!("canary m: mean={mean_canary_m:.3} min={min_canary_m:.3}");
    let mean_canary_d: f64 = canary_m.iter().map(|c| c.1).sum::<f64>() / canary_m.len() as f64;
    println!("canary d mean={mean_canary_d:.3}");

    // Per-group trajectory diagnostics.
    for g in &corpus.canaries {
        let idx = out.trace.sample_index(&g.sample_ids[0]).unwrap();
        let series: Vec<f64> = (1..=out.trace.epochs())
            .map(|t| out.trace.get(t, idx).unwrap())
            .collect();
        let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let last = series.last().unwrap();
        let below = series.iter().filter(|&&l| l < map.epsilon_resolved).count();
        println!(
            "  {}: min={min:.2} last={last:.2} below_eps={below}/40 m={:.3}",
            g.group_id,
            map.samples[idx].m
        );
    }

    // Prune 10% and retrain.
    let plan = prune_top_fraction(&map, 0.10).unwrap();
    let pruned_canaries = corpus
        .canaries
        .iter()
        .flat_map(|g| &g.sample_ids)
        .filter(|id| plan.removed.contains(*id))
        .count();
    println!("pruned {} samples, of which canary copies: {pruned_canaries}", plan.removed.len());

    let mut pruned_model = ConvexLm::new(spec.vocab_size, 3);
    train(&mut pruned_model, &corpus, &cfg, Some(&plan)).unwrap();
    let report = run_audit(&pruned_model, &corpus, 0.5).unwrap();
    let gap_base = gendatacarto::trainer::generalization_gap(&model, &corpus, None).unwrap();
    let gap_pruned =
        gendatacarto::trainer::generalization_gap(&pruned_model, &corpus, Some(&plan)).unwrap();
    println!(
        "gap baseline={gap_base:.4} pruned={gap_pruned:.4} reduction={:+.4}",
        gap_base - gap_pruned
    );
    println!(
        "pruned extraction={:.2} ppl={:.3} (delta {:+.2}%) mi_auc={:.3} leakage={:?}",
        report.extraction_success,
        report.perplexity,
        100.0 * (report.perplexity / ppl - 1.0),
        report.mi_auc,
        report.heldout_leakage
    );

    // Theorem-2-style check: spearman between m and Inf/T on m>0 plus an
    // equal random slice of m=0.
    let t0 = std::time::Instant::now();
    let inf = influence_sums(&model, out.snapshots.as_ref().unwrap(), &corpus).unwrap();
    println!("influence in {:?}", t0.elapsed());
    let t_epochs = cfg.epochs as f64;
    let mut pos_idx: Vec<usize> = (0..n_train).filter(|&i| map.samples[i].m > 0.0).collect();
    let zero_idx: Vec<usize> = (0..n_train).filter(|&i| map.samples[i].m == 0.0).collect();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut zeros = zero_idx.clone();
    for i in (1..zeros.len()).rev() {
        let j = rng.random_range(0..=i);
        zeros.swap(i, j);
    }
    zeros.truncate(pos_idx.len());
    pos_idx.extend(zeros);
    let ms: Vec<f64> = pos_idx.iter().map(|&i| map.samples[i].m).collect();
    let infs: Vec<f64> = pos_idx.iter().map(|&i| inf[i] / t_epochs).collect();
    println!("spearman(m, inf/T) over {} samples = {:.3}", ms.len(), spearman(&ms, &infs));

    // Influence scale comparison.
    let mean_inf_canary: f64 = (0..n_train)
        .filter(|&i| map.samples[i].sample_id.starts_with("canary"))
        .map(|i| inf[i])
        .sum::<f64>()
        / (3 * groups) as f64;
    let mean_inf_other: f64 = (0..n_train)
        .filter(|&i| !map.samples[i].sample_id.starts_with("canary"))
        .map(|i| inf[i])
        .sum::<f64>()
        / (n_train - 3 * groups) as f64;
    println!("mean Inf canary={mean_inf_canary:.2} other={mean_inf_other:.2}");
}

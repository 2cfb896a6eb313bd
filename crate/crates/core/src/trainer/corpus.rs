//! Token-sequence corpora: splits, canary registry, synthesis, and the
//! newline-delimited file format with a JSON header.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryGroup {
    pub group_id: String,
    /// Every repetition shares this token sequence.
    pub tokens: Vec<Token>,
    pub sample_ids: Vec<String>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub split: Split,
    pub tokens: Vec<Token>,
}

/// A tokenized corpus with train/heldout splits, a canary registry, and an
/// optional list of heldout sequences deliberately duplicated into train
/// (the benchmark-leakage probe).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub samples: Vec<CorpusSample>,
    pub canaries: Vec<CanaryGroup>,
    pub leaked_heldout: Vec<String>,
}

impl Corpus {
    pub fn new(vocab_size: usize, samples: Vec<CorpusSample>) -> Result<Self> {
        let corpus = Self {
            vocab_size,
            samples,
            canaries: Vec::new(),
            leaked_heldout: Vec::new(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.vocab_size > 1 << 16 {
            return Err(Error::Corpus("vocab_size must be in 1..=65536".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate sample id {:?}", s.id)));
            }
            if s.tokens.is_empty() {
                return Err(Error::Corpus(format!("sample {:?} is empty", s.id)));
            }
            if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
                return Err(Error::Corpus(format!(
                    "sample {:?} has token {t} outside vocab of size {}",
                    s.id, self.vocab_size
                )));
            }
        }
        let train_ids: HashSet<&str> = self
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.id.as_str())
            .collect();
        for g in &self.canaries {
            for id in &g.sample_ids {
                if !train_ids.contains(id.as_str()) {
                    return Err(Error::Corpus(format!(
                        "canary sample {id:?} is not a train sample"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == Split::Train)
            .collect()
    }

    pub fn heldout_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == Split::Heldout)
            .collect()
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.train_indices()
            .into_iter()
            .map(|i| self.samples[i].id.clone())
            .collect()
    }

    pub fn sample_by_id(&self, id: &str) -> Option<&CorpusSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn all_ngrams(&self, n: usize) -> HashSet<Vec<Token>> {
        let mut grams = HashSet::new();
        for s in &self.samples {
            for w in s.tokens.windows(n) {
                grams.insert(w.to_vec());
            }
        }
        grams
    }
}

/// Injects `count` canary groups of random unique sequences, each inserted
/// `repetitions` times as distinct train samples sharing a group id.
///
/// Candidates are rejection-sampled so that no window of half the canary
/// length collides with an n-gram already in the corpus (or in an earlier
/// canary); after 1000 straight rejections the vocabulary is deemed too
/// small.
pub fn inject_canaries(
    corpus: &Corpus,
    count: usize,
    length: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Corpus> {
    if count == 0 {
        return Ok(corpus.clone());
    }
    if length < 2 || repetitions == 0 {
        return Err(Error::Corpus(
            "canary length must be >= 2 and repetitions >= 1".into(),
        ));
    }
    let window = length.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    let mut forbidden = corpus.all_ngrams(window);
    let existing_groups = out.canaries.len();

    for g in 0..count {
        let mut tokens = None;
        let mut rejections = 0;
        while tokens.is_none() {
            let candidate: Vec<Token> = (0..length)
                .map(|_| rng.random_range(0..corpus.vocab_size as Token))
                .collect();
            let collides = candidate
                .windows(window)
                .any(|w| forbidden.contains(w));
            if collides {
                rejections += 1;
                if rejections >= 1000 {
                    return Err(Error::CanaryCollision { attempts: rejections });
                }
            } else {
                tokens = Some(candidate);
            }
        }
        let tokens = tokens.unwrap();
        for w in tokens.windows(window) {
            forbidden.insert(w.to_vec());
        }
        let group_id = format!("canary-{:02}", existing_groups + g);
        let mut sample_ids = Vec::with_capacity(repetitions);
        for r in 0..repetitions {
            let id = format!("{group_id}-rep-{r}");
            sample_ids.push(id.clone());
            out.samples.push(CorpusSample {
                id,
                split: Split::Train,
                tokens: tokens.clone(),
            });
        }
        out.canaries.push(CanaryGroup {
            group_id,
            tokens,
            sample_ids,
            repetitions,
        });
    }
    out.validate()?;
    Ok(out)
}

/// Shape of a synthetic desk-scale corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub vocab_size: usize,
    /// Structured sequences only use tokens below this bound, leaving the
    /// rest of the vocabulary rare (canary territory).
    pub structured_vocab: usize,
    /// Successors reachable from each structured token.
    pub branching: usize,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Heldout sequences duplicated into train as leakage probes.
    pub leak_count: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            structured_vocab: 32,
            branching: 8,
            train_sequences: 1940,
            heldout_sequences: 500,
            min_len: 16,
            max_len: 24,
            leak_count: 30,
        }
    }
}

/// Generates a corpus from a seeded first-order Markov source over the
/// structured sub-vocabulary. Entropy per token is roughly `ln(branching)`,
/// so structured sequences are learnable but never reach near-zero loss.
pub fn synthesize_corpus(spec: &SyntheticCorpusSpec, seed: u64) -> Result<Corpus> {
    if spec.structured_vocab < 2
        || spec.structured_vocab > spec.vocab_size
        || spec.branching < 2
        || spec.min_len < 2
        || spec.max_len < spec.min_len
        || spec.leak_count > spec.heldout_sequences
    {
        return Err(Error::Corpus("implausible synthetic corpus spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = spec.structured_vocab as Token;

    // Fixed successor table: branching successors per token, drawn once.
    let successors: Vec<Vec<Token>> = (0..spec.structured_vocab)
        .map(|_| {
            (0..spec.branching)
                .map(|_| rng.random_range(0..v))
                .collect()
        })
        .collect();

    let gen_seq = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut tokens = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..v);
        tokens.push(cur);
        for _ in 1..len {
            let opts = &successors[cur as usize];
            cur = opts[rng.random_range(0..opts.len())];
            tokens.push(cur);
        }
        tokens
    };

    let mut samples = Vec::new();
    for i in 0..spec.train_sequences {
        samples.push(CorpusSample {
            id: format!("train-{i:05}"),
            split: Split::Train,
            tokens: gen_seq(&mut rng),
        });
    }
    let mut heldout_tokens = Vec::new();
    for i in 0..spec.heldout_sequences {
        let tokens = gen_seq(&mut rng);
        heldout_tokens.push(tokens.clone());
        samples.push(CorpusSample {
            id: format!("heldout-{i:05}"),
            split: Split::Heldout,
            tokens,
        });
    }
    // Duplicate the first leak_count heldout sequences into train.
    let mut leaked = Vec::new();
    for i in 0..spec.leak_count {
        let id = format!("leak-{i:05}");
        leaked.push(format!("heldout-{i:05}"));
        samples.push(CorpusSample {
            id,
            split: Split::Train,
            tokens: heldout_tokens[i].clone(),
        });
    }
    let mut corpus = Corpus::new(spec.vocab_size, samples)?;
    corpus.leaked_heldout = leaked;
    Ok(corpus)
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    version: u32,
    vocab_size: usize,
    samples: Vec<HeaderSample>,
    canaries: Vec<CanaryGroup>,
    #[serde(default)]
    leaked_heldout: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderSample {
    id: String,
    split: Split,
}

impl Corpus {
    /// File format: one JSON header line, then one sequence per line as
    /// space-separated token ids, aligned with the header's sample list.
    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        let header = CorpusHeader {
            version: 1,
            vocab_size: self.vocab_size,
            samples: self
                .samples
                .iter()
                .map(|s| HeaderSample {
                    id: s.id.clone(),
                    split: s.split,
                })
                .collect(),
            canaries: self.canaries.clone(),
            leaked_heldout: self.leaked_heldout.clone(),
        };
        writeln!(writer, "{}", serde_json::to_string(&header)?)?;
        for s in &self.samples {
            let line: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
            writeln!(writer, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Corpus("empty corpus file".into()))??;
        let header: CorpusHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Corpus(format!("bad corpus header: {e}")))?;
        let mut samples = Vec::with_capacity(header.samples.len());
        for (i, meta) in header.samples.iter().enumerate() {
            let line = lines.next().ok_or_else(|| {
                Error::Corpus(format!(
                    "corpus ends early: expected {} sequences, got {i}",
                    header.samples.len()
                ))
            })??;
            let tokens = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<Token>()
                        .map_err(|_| Error::Corpus(format!("bad token {t:?} on line {}", i + 2)))
                })
                .collect::<Result<Vec<Token>>>()?;
            samples.push(CorpusSample {
                id: meta.id.clone(),
                split: meta.split,
                tokens,
            });
        }
        let mut corpus = Corpus::new(header.vocab_size, samples)?;
        corpus.canaries = header.canaries;
        corpus.leaked_heldout = header.leaked_heldout;
        corpus.validate()?;
        Ok(corpus)
    }
}

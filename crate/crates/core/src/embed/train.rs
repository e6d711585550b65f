//! Skip-gram training with negative sampling.
//!
//! The single-worker path is fully deterministic for a fixed seed. With
//! `workers > 1` the sentence shards are trained hogwild-style: updates to
//! the shared matrices race benignly and results vary run to run, which is
//! the standard trade for this algorithm family.

use super::subword::{bucket_of, subword_ngrams};
use super::{subsample_keep, EmbeddingConfig, EmbeddingMatrix, EmbeddingMode, SubwordTable};
use crate::error::{Error, Result};
use crate::tensor::sigmoid;
use crate::textprep::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

/// Negative-sampling distribution: unigram counts raised to 0.75.
pub struct UnigramTable {
    ids: Vec<u32>,
    cumulative: Vec<f64>,
    total: f64,
}

impl UnigramTable {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for (id, _) in vocab.tokens() {
            total += (vocab.count(id) as f64).powf(0.75);
            ids.push(id);
            cumulative.push(total);
        }
        UnigramTable {
            ids,
            cumulative,
            total,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let x = rng.random::<f64>() * self.total;
        let pos = self.cumulative.partition_point(|&c| c <= x);
        self.ids[pos.min(self.ids.len() - 1)]
    }

    /// Normalized weight of one id, for distribution checks.
    pub fn probability(&self, id: u32) -> f64 {
        let pos = self.ids.iter().position(|&i| i == id);
        match pos {
            Some(p) => {
                let prev = if p == 0 { 0.0 } else { self.cumulative[p - 1] };
                (self.cumulative[p] - prev) / self.total
            }
            None => 0.0,
        }
    }
}

/// Shared f64 matrix allowing lock-free concurrent updates via bit-cast
/// atomics. Races between workers are accepted; a single worker sees fully
/// deterministic behaviour.
struct SharedMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn new(rows: usize, dim: usize, mut init: impl FnMut() -> f64) -> Self {
        let data = (0..rows * dim)
            .map(|_| AtomicU64::new(init().to_bits()))
            .collect();
        SharedMatrix { data, dim }
    }

    fn zeros(rows: usize, dim: usize) -> Self {
        Self::new(rows, dim, || 0.0)
    }

    fn read_row(&self, row: usize, buf: &mut [f64]) {
        let base = row * self.dim;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = f64::from_bits(self.data[base + i].load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, row: usize, delta: &[f64]) {
        let base = row * self.dim;
        for (i, &d) in delta.iter().enumerate() {
            let cell = &self.data[base + i];
            let v = f64::from_bits(cell.load(Ordering::Relaxed)) + d;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.data
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect()
    }
}

/// Per-run record: average negative-sampling loss per epoch and totals.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub pairs_trained: u64,
    pub vocab_size: usize,
}

struct Job<'a> {
    sentences: &'a [Vec<u32>],
    keep_prob: &'a [f64],
    word_buckets: &'a [Vec<u32>],
    table: &'a UnigramTable,
    input: &'a SharedMatrix,
    output: &'a SharedMatrix,
    subwords: Option<&'a SharedMatrix>,
    processed: &'a AtomicU64,
    total_words: u64,
    config: &'a EmbeddingConfig,
}

/// Train skip-gram embeddings on a tokenized corpus.
pub fn train_embeddings(
    corpus: &[Vec<String>],
    config: &EmbeddingConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, TrainSummary)> {
    config.validate()?;
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Training("empty corpus".into()));
    }
    let vocab = Vocabulary::build(corpus, config.min_count)
        .map_err(|e| Error::Training(format!("cannot build vocabulary: {e}")))?;
    let dim = config.dim;
    let rows = vocab.len();

    // Sentences as id sequences; tokens below min_count are dropped.
    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.id(t)).collect())
        .filter(|s: &Vec<u32>| !s.is_empty())
        .collect();

    let total_count = vocab.total_token_occurrences();
    let keep_prob: Vec<f64> = (0..rows as u32)
        .map(|id| {
            let c = vocab.count(id);
            if c == 0 {
                0.0
            } else {
                subsample_keep(c as f64 / total_count as f64, config.downsample_t)
            }
        })
        .collect();

    // fastText: subword buckets per vocabulary word, fixed up front.
    let word_buckets: Vec<Vec<u32>> = if config.mode == EmbeddingMode::FastText {
        (0..rows as u32)
            .map(|id| match vocab.token(id) {
                Some(tok) if id >= 2 => subword_ngrams(tok, config.ngram_min, config.ngram_max)
                    .iter()
                    .map(|g| bucket_of(g, config.bucket_count) as u32)
                    .collect(),
                _ => Vec::new(),
            })
            .collect()
    } else {
        vec![Vec::new(); rows]
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 0.5 / dim as f64;
    let mut row_idx = 0usize;
    let mut cell = 0usize;
    let input = SharedMatrix::new(rows, dim, || {
        // Reserved rows 0 and 1 stay zero.
        let v = if row_idx < 2 {
            0.0
        } else {
            init_rng.random_range(-span..span)
        };
        cell += 1;
        if cell % dim == 0 {
            row_idx += 1;
        }
        v
    });
    let output = SharedMatrix::zeros(rows, dim);
    let subwords = if config.mode == EmbeddingMode::FastText {
        let mut sub_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        Some(SharedMatrix::new(config.bucket_count, dim, || {
            sub_rng.random_range(-span..span)
        }))
    } else {
        None
    };

    let table = UnigramTable::new(&vocab);
    let train_words: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let total_words = config.epochs as u64 * train_words;
    let processed = AtomicU64::new(0);

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut pairs_trained = 0u64;
    for epoch in 0..config.epochs {
        let workers = config.workers.min(sentences.len().max(1));
        let mut shards: Vec<Vec<Vec<u32>>> = vec![Vec::new(); workers];
        for (i, s) in sentences.iter().enumerate() {
            shards[i % workers].push(s.clone());
        }
        let results: Vec<(f64, u64)> = std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .enumerate()
                .map(|(w, shard)| {
                    let job = Job {
                        sentences: shard,
                        keep_prob: &keep_prob,
                        word_buckets: &word_buckets,
                        table: &table,
                        input: &input,
                        output: &output,
                        subwords: subwords.as_ref(),
                        processed: &processed,
                        total_words,
                        config,
                    };
                    let worker_seed = seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((epoch as u64) << 16)
                        .wrapping_add(w as u64 + 2);
                    scope.spawn(move || run_worker(job, worker_seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let (loss_sum, pair_sum) = results
            .iter()
            .fold((0.0, 0u64), |(l, p), &(lw, pw)| (l + lw, p + pw));
        pairs_trained += pair_sum;
        epoch_losses.push(if pair_sum == 0 {
            0.0
        } else {
            loss_sum / pair_sum as f64
        });
    }

    let matrix = EmbeddingMatrix::new(
        vocab.clone(),
        dim,
        config.mode,
        input.into_vec(),
        subwords.map(|s| SubwordTable {
            vectors: s.into_vec(),
            bucket_count: config.bucket_count,
            ngram_min: config.ngram_min,
            ngram_max: config.ngram_max,
        }),
    );
    Ok((
        matrix,
        TrainSummary {
            epoch_losses,
            pairs_trained,
            vocab_size: vocab.len(),
        },
    ))
}

fn run_worker(job: Job<'_>, worker_seed: u64) -> (f64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(worker_seed);
    let dim = job.config.dim;
    let lr0 = job.config.initial_lr;
    let mut hidden = vec![0.0; dim];
    let mut grad_h = vec![0.0; dim];
    let mut target_row = vec![0.0; dim];
    let mut loss_sum = 0.0;
    let mut pairs = 0u64;

    for sentence in job.sentences {
        let reduced: Vec<u32> = sentence
            .iter()
            .copied()
            .filter(|&id| rng.random::<f64>() < job.keep_prob[id as usize])
            .collect();
        for (i, &center) in reduced.iter().enumerate() {
            let done = job.processed.fetch_add(1, Ordering::Relaxed);
            let alpha =
                lr0 * (1.0 - done as f64 / (job.total_words + 1) as f64).max(1e-4);
            let b = rng.random_range(1..=job.config.window);
            let lo = i.saturating_sub(b);
            let hi = (i + b).min(reduced.len() - 1);
            // Compose the center representation once per window.
            let center_rows = compose_center(&job, center, &mut hidden);
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                let context = reduced[j];
                grad_h.iter_mut().for_each(|g| *g = 0.0);
                // Positive pair plus sampled negatives.
                for neg in 0..=job.config.negatives {
                    let (target, label) = if neg == 0 {
                        (context, 1.0)
                    } else {
                        let t = job.table.sample(&mut rng);
                        if t == context {
                            continue;
                        }
                        (t, 0.0)
                    };
                    job.output.read_row(target as usize, &mut target_row);
                    let score: f64 =
                        hidden.iter().zip(&target_row).map(|(&h, &t)| h * t).sum();
                    let pred = sigmoid(score);
                    loss_sum -= if label == 1.0 {
                        pred.max(1e-10).ln()
                    } else {
                        (1.0 - pred).max(1e-10).ln()
                    };
                    let g = (label - pred) * alpha;
                    for (gh, &t) in grad_h.iter_mut().zip(&target_row) {
                        *gh += g * t;
                    }
                    // dOutput = g * hidden
                    let delta: Vec<f64> = hidden.iter().map(|&h| g * h).collect();
                    job.output.add_row(target as usize, &delta);
                }
                // Distribute the hidden gradient across the composed rows.
                let share = 1.0 / center_rows as f64;
                let delta: Vec<f64> = grad_h.iter().map(|&g| g * share).collect();
                job.input.add_row(center as usize, &delta);
                if let Some(sub) = job.subwords {
                    for &bucket in &job.word_buckets[center as usize] {
                        sub.add_row(bucket as usize, &delta);
                    }
                }
                pairs += 1;
            }
        }
    }
    (loss_sum, pairs)
}

/// Load the center word's representation into `hidden`; returns how many
/// rows were averaged (1 for word2vec, 1 + n-gram count for fastText).
fn compose_center(job: &Job<'_>, center: u32, hidden: &mut [f64]) -> usize {
    let dim = job.config.dim;
    job.input.read_row(center as usize, hidden);
    let mut rows = 1usize;
    if let Some(sub) = job.subwords {
        let mut buf = vec![0.0; dim];
        for &bucket in &job.word_buckets[center as usize] {
            sub.read_row(bucket as usize, &mut buf);
            for (h, &v) in hidden.iter_mut().zip(&buf) {
                *h += v;
            }
            rows += 1;
        }
        if rows > 1 {
            for h in hidden.iter_mut() {
                *h /= rows as f64;
            }
        }
    }
    rows
}

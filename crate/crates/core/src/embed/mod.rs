//! Skip-gram word embeddings with negative sampling, in plain word2vec and
//! fastText-style subword variants.

mod io;
mod subword;
mod train;

pub use io::{load_text, save_text};
pub use subword::{bucket_of, fnv1a_64, subword_ngrams};
pub use train::{train_embeddings, TrainSummary, UnigramTable};

use crate::error::{Error, Result};
use crate::textprep::Vocabulary;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingMode {
    Word2Vec,
    FastText,
}

impl EmbeddingMode {
    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingMode::Word2Vec => "word2vec",
            EmbeddingMode::FastText => "fasttext",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "word2vec" => Ok(EmbeddingMode::Word2Vec),
            "fasttext" => Ok(EmbeddingMode::FastText),
            other => Err(Error::Config(format!(
                "unknown embedding mode '{other}' (expected word2vec|fasttext)"
            ))),
        }
    }
}

/// Hyperparameters for one embedding training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    pub workers: usize,
    pub downsample_t: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub mode: EmbeddingMode,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub bucket_count: usize,
    pub initial_lr: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            window: 5,
            min_count: 1,
            workers: 1,
            downsample_t: 0.001,
            negatives: 5,
            epochs: 5,
            mode: EmbeddingMode::FastText,
            ngram_min: 3,
            ngram_max: 6,
            bucket_count: 200_000,
            initial_lr: 0.025,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("embedding dim must be >= 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("embedding window must be >= 1".into()));
        }
        if self.mode == EmbeddingMode::FastText {
            if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
                return Err(Error::Config(format!(
                    "bad subword n-gram range {}..{}",
                    self.ngram_min, self.ngram_max
                )));
            }
            if self.bucket_count == 0 {
                return Err(Error::Config("bucket_count must be >= 1".into()));
            }
        }
        if !(self.downsample_t > 0.0) {
            return Err(Error::Config("downsampling threshold must be > 0".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keep probability for a token with corpus frequency `f` under
/// downsampling threshold `t`: the discard probability `1 - sqrt(t/f)` is
/// clamped to `[0, 1]` and inverted.
pub fn subsample_keep(f: f64, t: f64) -> f64 {
    assert!(f > 0.0 && f <= 1.0, "frequency {f} outside (0, 1]");
    assert!(t > 0.0, "threshold {t} must be positive");
    let discard = (1.0 - (t / f).sqrt()).clamp(0.0, 1.0);
    1.0 - discard
}

/// Subword bucket table trained in fastText mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordTable {
    pub(crate) vectors: Vec<f64>,
    pub(crate) bucket_count: usize,
    pub(crate) ngram_min: usize,
    pub(crate) ngram_max: usize,
}

/// Trained token vectors plus, in fastText mode, the subword buckets.
///
/// Rows are indexed by vocabulary id; the two reserved ids (pad, oov) stay
/// zero. A fastText word is represented as the mean of its own row and its
/// subword bucket rows, which also gives out-of-vocabulary tokens a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    dim: usize,
    mode: EmbeddingMode,
    input_vectors: Vec<f64>,
    subwords: Option<SubwordTable>,
}

impl EmbeddingMatrix {
    pub(crate) fn new(
        vocab: Vocabulary,
        dim: usize,
        mode: EmbeddingMode,
        input_vectors: Vec<f64>,
        subwords: Option<SubwordTable>,
    ) -> Self {
        debug_assert_eq!(input_vectors.len(), vocab.len() * dim);
        EmbeddingMatrix {
            vocab,
            dim,
            mode,
            input_vectors,
            subwords,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.input_vectors[i..i + self.dim]
    }

    /// The vector served for a token.
    ///
    /// word2vec: the token's row, or zeros when out of vocabulary.
    /// fastText: the mean of the token row and its subword rows; an
    /// out-of-vocabulary token gets the mean of its subword rows alone.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        let id = self.vocab.id(token);
        match (&self.subwords, id) {
            (None, Some(id)) => self.row(id).to_vec(),
            (None, None) => vec![0.0; self.dim],
            (Some(sub), id) => {
                let mut acc = vec![0.0; self.dim];
                let mut count = 0usize;
                if let Some(id) = id {
                    for (a, &v) in acc.iter_mut().zip(self.row(id)) {
                        *a += v;
                    }
                    count += 1;
                }
                for gram in subword_ngrams(token, sub.ngram_min, sub.ngram_max) {
                    let b = bucket_of(&gram, sub.bucket_count);
                    let row = &sub.vectors[b * self.dim..(b + 1) * self.dim];
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                    count += 1;
                }
                if count > 0 {
                    for a in &mut acc {
                        *a /= count as f64;
                    }
                }
                acc
            }
        }
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        cosine(&va, &vb)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_keep_boundary_and_clamp() {
        assert_eq!(subsample_keep(0.001, 0.001), 1.0);
        assert!((subsample_keep(0.1, 0.001) - 0.1).abs() <= 1e-12);
        assert_eq!(subsample_keep(0.0001, 0.001), 1.0);
    }

    #[test]
    fn oov_word2vec_is_zero_vector() {
        let docs = vec![vec!["a", "b"]];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let n = vocab.len();
        let m = EmbeddingMatrix::new(
            vocab,
            3,
            EmbeddingMode::Word2Vec,
            vec![0.5; n * 3],
            None,
        );
        assert_eq!(m.vector("zzz"), vec![0.0; 3]);
        assert_eq!(m.vector("a").len(), 3);
    }

    #[test]
    fn oov_fasttext_uses_subword_rows() {
        let docs = vec![vec!["a", "b"]];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let n = vocab.len();
        let m = EmbeddingMatrix::new(
            vocab,
            2,
            EmbeddingMode::FastText,
            vec![0.0; n * 2],
            Some(SubwordTable {
                vectors: vec![1.0; 8 * 2],
                bucket_count: 8,
                ngram_min: 3,
                ngram_max: 6,
            }),
        );
        let v = m.vector("zzz");
        assert!(v.iter().any(|&x| x != 0.0));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn config_validation() {
        let mut c = EmbeddingConfig::default();
        assert!(c.validate().is_ok());
        c.dim = 0;
        assert!(c.validate().is_err());
        c = EmbeddingConfig {
            ngram_min: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_config_is_fasttext_300() {
        let c = EmbeddingConfig::default();
        assert_eq!(c.dim, 300);
        assert_eq!(c.mode, EmbeddingMode::FastText);
        assert_eq!(c.window, 5);
        assert_eq!(c.min_count, 1);
        assert_eq!(c.downsample_t, 0.001);
    }
}

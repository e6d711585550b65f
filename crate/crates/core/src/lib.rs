//! sentiforge: a from-scratch deep-learning toolkit for multi-class sentiment
//! classification of Sinhala news comments.
//!
//! The crate is organised around the pipeline it implements:
//!
//! - [`tensor`] — tape-based reverse-mode autodiff with optimizers, losses,
//!   initializers, and regularizers; everything downstream builds on it.
//! - [`textprep`] — Unicode-aware cleaning, punctuation policies,
//!   tokenization, vocabulary construction, and id encoding.
//! - [`embed`] — skip-gram word2vec and fastText-style subword embeddings
//!   trained with negative sampling.
//! - [`models`] — the classifier families: recurrent baselines, CNN hybrids,
//!   stacked recurrent nets, a hierarchical attention network, and capsule
//!   networks with dynamic routing.
//! - [`eval`] — holdout/k-fold splitting, confusion matrices, weighted
//!   metrics, Cohen's kappa, and cross-validation.
//! - [`checkpoint`] — the `SFORGE1` model container.

pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod eval;
pub mod models;
pub mod tensor;
pub mod textprep;

pub use error::{Error, Result};

//! Classifier architectures: recurrent baselines, a bidirectional LSTM,
//! CNN-recurrent hybrids, stacked recurrent nets, a hierarchical attention
//! network, and capsule networks with dynamic routing. Every model maps a
//! padded token-id sequence to scores over the four sentiment classes.

pub mod capsule;
pub mod cells;
mod cnn;
mod hahnn;
mod recurrent;
mod train;

pub use capsule::dynamic_routing;
pub use cells::{gru_cell, lstm_cell, rnn_cell, GruGates, LstmGates, RnnGates};
pub use hahnn::AttentionTrace;
pub use train::{
    cross_validate, evaluate, predict_labels, train_model, CvOutcome, EpochStats, History,
};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::tensor::{he_init, Mode, OptimizerConfig, RegularizerConfig, Tape, Tensor, Var};
use crate::textprep::{Label, Vocabulary, NUM_CLASSES, PAD_ID};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The model families reported by the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Rnn,
    Lstm,
    Gru,
    BiLstm,
    CnnGru,
    CnnLstm,
    CnnBiLstm,
    StackedLstm(u8),
    StackedBiLstm(u8),
    Hahnn,
    CapsuleA,
    CapsuleB,
}

impl Variant {
    pub const ALL: [Variant; 14] = [
        Variant::Rnn,
        Variant::Lstm,
        Variant::Gru,
        Variant::BiLstm,
        Variant::CnnGru,
        Variant::CnnLstm,
        Variant::CnnBiLstm,
        Variant::StackedLstm(2),
        Variant::StackedLstm(3),
        Variant::StackedBiLstm(2),
        Variant::StackedBiLstm(3),
        Variant::Hahnn,
        Variant::CapsuleA,
        Variant::CapsuleB,
    ];

    pub fn name(&self) -> String {
        match self {
            Variant::Rnn => "rnn".into(),
            Variant::Lstm => "lstm".into(),
            Variant::Gru => "gru".into(),
            Variant::BiLstm => "bilstm".into(),
            Variant::CnnGru => "cnn-gru".into(),
            Variant::CnnLstm => "cnn-lstm".into(),
            Variant::CnnBiLstm => "cnn-bilstm".into(),
            Variant::StackedLstm(d) => format!("stacked-lstm-{d}"),
            Variant::StackedBiLstm(d) => format!("stacked-bilstm-{d}"),
            Variant::Hahnn => "hahnn".into(),
            Variant::CapsuleA => "capsule-a".into(),
            Variant::CapsuleB => "capsule-b".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        let v = match s {
            "rnn" => Variant::Rnn,
            "lstm" => Variant::Lstm,
            "gru" => Variant::Gru,
            "bilstm" => Variant::BiLstm,
            "cnn-gru" => Variant::CnnGru,
            "cnn-lstm" => Variant::CnnLstm,
            "cnn-bilstm" => Variant::CnnBiLstm,
            "stacked-lstm-2" => Variant::StackedLstm(2),
            "stacked-lstm-3" => Variant::StackedLstm(3),
            "stacked-bilstm-2" => Variant::StackedBiLstm(2),
            "stacked-bilstm-3" => Variant::StackedBiLstm(3),
            "hahnn" => Variant::Hahnn,
            "capsule-a" => Variant::CapsuleA,
            "capsule-b" => Variant::CapsuleB,
            other => {
                return Err(Error::Config(format!("unknown model variant '{other}'")))
            }
        };
        Ok(v)
    }

    fn needs_conv(&self) -> bool {
        matches!(
            self,
            Variant::CnnGru
                | Variant::CnnLstm
                | Variant::CnnBiLstm
                | Variant::CapsuleA
                | Variant::CapsuleB
        )
    }

    fn needs_routing(&self) -> bool {
        matches!(self, Variant::CapsuleA | Variant::CapsuleB)
    }

    fn needs_attention(&self) -> bool {
        matches!(self, Variant::Hahnn)
    }
}

/// Convolutional front-end description for the CNN hybrids and the capsule
/// models' n-gram layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub num_layers: usize,
    pub filters: usize,
    pub kernel_sizes: Vec<usize>,
    pub pool_window: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn hybrid_default() -> Self {
        ConvSpec {
            num_layers: 2,
            filters: 64,
            kernel_sizes: vec![3, 5],
            pool_window: 2,
            dilation: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("conv kernel_sizes must be non-empty".into()));
        }
        if self.filters == 0 || self.pool_window == 0 || self.dilation == 0 {
            return Err(Error::Config(
                "conv filters, pool window, and dilation must be >= 1".into(),
            ));
        }
        if self.num_layers != self.kernel_sizes.len() {
            return Err(Error::Config(format!(
                "conv num_layers {} must match the {} kernel sizes (one branch per size)",
                self.num_layers,
                self.kernel_sizes.len()
            )));
        }
        Ok(())
    }
}

/// Capsule layer sizes and the agreement iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub iterations: usize,
    pub capsule_dim: usize,
    pub capsule_filters: usize,
    pub conv_filters: usize,
    pub grams: Vec<usize>,
}

impl RoutingConfig {
    pub fn default_for(variant: Variant) -> Self {
        RoutingConfig {
            iterations: 3,
            capsule_dim: 16,
            capsule_filters: 16,
            conv_filters: 32,
            grams: match variant {
                Variant::CapsuleB => vec![3, 4, 5],
                _ => vec![3],
            },
        }
    }
}

/// Margin-loss hinge points for capsule training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            m_plus: 0.8,
            m_minus: 0.2,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordEncoder {
    Gru,
    Lstm,
}

/// Hierarchical attention settings: context vector sizes, the word-level
/// encoder cell, the convolutional feature sizes, and how documents are cut
/// into sentences (fixed-length chunks; a detached `?` also ends a sentence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub word_context_dim: usize,
    pub sentence_context_dim: usize,
    pub word_encoder: WordEncoder,
    pub conv_filter_sizes: Vec<usize>,
    pub conv_filters: usize,
    pub sentence_len: usize,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        AttentionSpec {
            word_context_dim: 100,
            sentence_context_dim: 100,
            word_encoder: WordEncoder::Gru,
            conv_filter_sizes: vec![3, 4, 5],
            conv_filters: 64,
            sentence_len: 10,
        }
    }
}

/// Complete description of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden_units: usize,
    pub dropout_p: f64,
    pub embedding_dim: usize,
    pub max_len: usize,
    pub trainable_embeddings: bool,
    pub conv: Option<ConvSpec>,
    pub routing: Option<RoutingConfig>,
    pub attention: Option<AttentionSpec>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub regularizer: RegularizerConfig,
    pub margin: MarginConfig,
    pub early_stopping: bool,
}

impl ModelSpec {
    /// Per-variant defaults: the baselines use Adadelta at 0.95 with 0.5
    /// dropout, the attention model Adam 0.001 with decay 1e-4, dropout 0.2
    /// and batch 64, the capsule models Adam 0.001 with batch 50.
    pub fn new(variant: Variant, embedding_dim: usize) -> ModelSpec {
        let (optimizer, dropout_p, batch_size) = match variant {
            Variant::Rnn | Variant::Lstm | Variant::Gru => {
                (OptimizerConfig::adadelta(0.95), 0.5, 32)
            }
            Variant::Hahnn => (OptimizerConfig::adam(0.001, 0.0001), 0.2, 64),
            Variant::CapsuleA | Variant::CapsuleB => (OptimizerConfig::adam(0.001, 0.0), 0.0, 50),
            _ => (OptimizerConfig::adam(0.001, 0.0), 0.5, 32),
        };
        let conv = if variant.needs_conv() {
            Some(match variant {
                Variant::CapsuleA | Variant::CapsuleB => {
                    let routing = RoutingConfig::default_for(variant);
                    ConvSpec {
                        num_layers: routing.grams.len(),
                        filters: routing.conv_filters,
                        kernel_sizes: routing.grams.clone(),
                        pool_window: 2,
                        dilation: 1,
                    }
                }
                _ => ConvSpec::hybrid_default(),
            })
        } else {
            None
        };
        ModelSpec {
            variant,
            hidden_units: 100,
            dropout_p,
            embedding_dim,
            max_len: 50,
            trainable_embeddings: false,
            conv,
            routing: variant.needs_routing().then(|| RoutingConfig::default_for(variant)),
            attention: variant.needs_attention().then(AttentionSpec::default),
            optimizer,
            batch_size,
            regularizer: RegularizerConfig::default(),
            margin: MarginConfig::default(),
            early_stopping: false,
        }
    }

    /// Reject any variant-specific omission or contradiction before any
    /// compute happens.
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.embedding_dim == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "hidden_units, embedding_dim, and max_len must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        self.optimizer.validate()?;
        self.regularizer.validate()?;
        if let Variant::StackedLstm(d) | Variant::StackedBiLstm(d) = self.variant {
            if !(2..=3).contains(&d) {
                return Err(Error::Config(format!(
                    "stacked depth must be 2 or 3, got {d}"
                )));
            }
        }
        match (&self.conv, self.variant.needs_conv()) {
            (None, true) => {
                return Err(Error::Config(format!(
                    "variant {} requires a conv section",
                    self.variant.name()
                )))
            }
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "variant {} does not take a conv section",
                    self.variant.name()
                )))
            }
            (Some(c), true) => c.validate()?,
            (None, false) => {}
        }
        match (&self.routing, self.variant.needs_routing()) {
            (None, true) => {
                return Err(Error::Config(format!(
                    "variant {} requires a routing section",
                    self.variant.name()
                )))
            }
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "variant {} does not take a routing section",
                    self.variant.name()
                )))
            }
            (Some(r), true) => {
                if r.iterations == 0 || r.capsule_dim == 0 || r.capsule_filters == 0 {
                    return Err(Error::Config(
                        "routing iterations, capsule_dim, capsule_filters must be >= 1".into(),
                    ));
                }
                let expected: &[usize] = match self.variant {
                    Variant::CapsuleA => &[3],
                    _ => &[3, 4, 5],
                };
                if r.grams != expected {
                    return Err(Error::Config(format!(
                        "variant {} uses grams {:?}, got {:?}",
                        self.variant.name(),
                        expected,
                        r.grams
                    )));
                }
                let conv = self.conv.as_ref().expect("checked above");
                if conv.kernel_sizes != r.grams || conv.filters != r.conv_filters {
                    return Err(Error::Config(
                        "capsule conv section must mirror routing grams and conv_filters".into(),
                    ));
                }
            }
            (None, false) => {}
        }
        match (&self.attention, self.variant.needs_attention()) {
            (None, true) => {
                return Err(Error::Config(
                    "variant hahnn requires an attention section".into(),
                ))
            }
            (Some(_), false) => {
                return Err(Error::Config(format!(
                    "variant {} does not take an attention section",
                    self.variant.name()
                )))
            }
            (Some(a), true) => {
                if a.word_context_dim == 0 || a.sentence_context_dim == 0 {
                    return Err(Error::Config("attention context dims must be >= 1".into()));
                }
                if a.conv_filter_sizes.is_empty() || a.conv_filters == 0 {
                    return Err(Error::Config(
                        "attention conv filter sizes/filters must be set".into(),
                    ));
                }
                if a.sentence_len == 0 {
                    return Err(Error::Config("attention sentence_len must be >= 1".into()));
                }
            }
            (None, false) => {}
        }
        if !(self.margin.m_minus >= 0.0
            && self.margin.m_minus < self.margin.m_plus
            && self.margin.m_plus <= 1.0
            && self.margin.lambda >= 0.0)
        {
            return Err(Error::Config(format!(
                "bad margin configuration {:?}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// How the 4 class scores are produced, which decides the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Scores are logits fed through softmax; trained with cross-entropy.
    Softmax,
    /// Scores are capsule norms in `[0, 1)`; trained with margin loss.
    CapsuleNorms,
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered parameter store; the order fixes optimizer-slot alignment,
/// checkpoint layout, and gradient collection.
#[derive(Debug, Clone, Default)]
pub struct Parameters {
    items: Vec<Param>,
}

impl Parameters {
    pub(crate) fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.items.push(Param {
            name: name.into(),
            tensor,
            trainable: true,
        });
        self.items.len() - 1
    }

    pub(crate) fn push_frozen(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.items.push(Param {
            name: name.into(),
            tensor,
            trainable: false,
        });
        self.items.len() - 1
    }

    pub fn items(&self) -> &[Param] {
        &self.items
    }

    pub fn items_mut(&mut self) -> &mut [Param] {
        &mut self.items
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.items.iter().find(|p| p.name == name)
    }

    pub fn total_count(&self) -> usize {
        self.items.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.items
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Lease every parameter onto a tape; returns the handles in item order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.items
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.param(p.tensor.clone())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect()
    }
}

enum Arch {
    Baseline(recurrent::BaselineArch),
    BiLstm(recurrent::BiLstmArch),
    Stacked(recurrent::StackedArch),
    Cnn(cnn::CnnArch),
    Hahnn(hahnn::HahnnArch),
    Capsule(capsule::CapsuleArch),
}

/// A constructed classifier: spec, parameters, and the wiring between them.
pub struct Model {
    spec: ModelSpec,
    params: Parameters,
    vocab_size: usize,
    question_id: Option<u32>,
    embedding_idx: usize,
    arch: Arch,
}

impl Model {
    /// Build a model whose embedding rows come from a trained matrix,
    /// looked up per vocabulary token (pad and oov rows stay zero).
    pub fn new<R: Rng>(
        spec: ModelSpec,
        vocab: &Vocabulary,
        embeddings: &EmbeddingMatrix,
        rng: &mut R,
    ) -> Result<Model> {
        if embeddings.dim() != spec.embedding_dim {
            return Err(Error::Config(format!(
                "model expects embedding dim {}, matrix provides {}",
                spec.embedding_dim,
                embeddings.dim()
            )));
        }
        let mut table = vec![0.0; vocab.len() * spec.embedding_dim];
        for (id, token) in vocab.tokens() {
            let v = embeddings.vector(token);
            table[id as usize * spec.embedding_dim..(id as usize + 1) * spec.embedding_dim]
                .copy_from_slice(&v);
        }
        let embedding = Tensor::new(vec![vocab.len(), spec.embedding_dim], table)?;
        Self::with_embedding_table(spec, embedding, vocab.id("?"), rng)
    }

    /// Build a model with randomly initialized embedding rows (pad row zero).
    pub fn with_random_embeddings<R: Rng>(
        spec: ModelSpec,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Model> {
        let mut embedding = he_init(
            vec![vocab_size, spec.embedding_dim],
            spec.embedding_dim,
            rng,
        )?;
        embedding.values_mut()[..spec.embedding_dim].fill(0.0);
        Self::with_embedding_table(spec, embedding, None, rng)
    }

    pub fn with_embedding_table<R: Rng>(
        spec: ModelSpec,
        embedding: Tensor,
        question_id: Option<u32>,
        rng: &mut R,
    ) -> Result<Model> {
        spec.validate()?;
        if embedding.shape().len() != 2 || embedding.shape()[1] != spec.embedding_dim {
            return Err(Error::Config(format!(
                "embedding table shape {:?} does not provide dim {}",
                embedding.shape(),
                spec.embedding_dim
            )));
        }
        let vocab_size = embedding.shape()[0];
        let mut params = Parameters::default();
        let embedding_idx = if spec.trainable_embeddings {
            params.push("embedding", embedding)
        } else {
            params.push_frozen("embedding", embedding)
        };
        let arch = match spec.variant {
            Variant::Rnn | Variant::Lstm | Variant::Gru => Arch::Baseline(
                recurrent::BaselineArch::build(&spec, &mut params, rng)?,
            ),
            Variant::BiLstm => {
                Arch::BiLstm(recurrent::BiLstmArch::build(&spec, &mut params, rng)?)
            }
            Variant::StackedLstm(_) | Variant::StackedBiLstm(_) => {
                Arch::Stacked(recurrent::StackedArch::build(&spec, &mut params, rng)?)
            }
            Variant::CnnGru | Variant::CnnLstm | Variant::CnnBiLstm => {
                Arch::Cnn(cnn::CnnArch::build(&spec, &mut params, rng)?)
            }
            Variant::Hahnn => Arch::Hahnn(hahnn::HahnnArch::build(&spec, &mut params, rng)?),
            Variant::CapsuleA | Variant::CapsuleB => {
                Arch::Capsule(capsule::CapsuleArch::build(&spec, &mut params, rng)?)
            }
        };
        Ok(Model {
            spec,
            params,
            vocab_size,
            question_id,
            embedding_idx,
            arch,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn question_id(&self) -> Option<u32> {
        self.question_id
    }

    pub(crate) fn set_question_id(&mut self, id: Option<u32>) {
        self.question_id = id;
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.arch {
            Arch::Capsule(_) => HeadKind::CapsuleNorms,
            _ => HeadKind::Softmax,
        }
    }

    /// Shortest input the strict forward accepts for this architecture.
    pub fn min_len(&self) -> usize {
        match &self.arch {
            Arch::Baseline(_) | Arch::BiLstm(_) | Arch::Stacked(_) | Arch::Hahnn(_) => 1,
            Arch::Cnn(_) => {
                let conv = self.spec.conv.as_ref().expect("validated");
                conv.kernel_sizes
                    .iter()
                    .map(|&k| (k - 1) * conv.dilation + 1 + conv.pool_window - 1)
                    .max()
                    .unwrap_or(1)
            }
            Arch::Capsule(_) => {
                let routing = self.spec.routing.as_ref().expect("validated");
                routing.grams.iter().copied().max().unwrap_or(1)
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Strict forward: trailing pads are masked off, an all-pad input is an
    /// empty-sequence error, and an input shorter than the architecture's
    /// minimum is a sequence-too-short error. Returns the `[1, 4]` score row
    /// (logits for softmax heads, capsule norms for capsule heads).
    pub fn forward_scores<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let effective = effective_ids(ids)?;
        let min = self.min_len();
        if effective.len() < min {
            return Err(Error::SequenceTooShort {
                len: effective.len(),
                required: min,
            });
        }
        self.forward_canonical(tape, bound, effective, mode, rng)
    }

    /// Forward over ids already in canonical form (trailing pads, if any,
    /// were placed deliberately by [`Model::prepare_ids`] to reach the
    /// architecture minimum and are consumed as real zero-embedding steps).
    pub(crate) fn forward_canonical<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let effective = &ids[..ids.len().min(self.spec.max_len)];
        let embedding = bound[self.embedding_idx];
        match &self.arch {
            Arch::Baseline(a) => a.forward(tape, bound, &self.spec, embedding, effective, mode, rng),
            Arch::BiLstm(a) => a.forward(tape, bound, &self.spec, embedding, effective, mode, rng),
            Arch::Stacked(a) => a.forward(tape, bound, &self.spec, embedding, effective, mode, rng),
            Arch::Cnn(a) => a.forward(tape, bound, &self.spec, embedding, effective, mode, rng),
            Arch::Hahnn(a) => a
                .forward(
                    tape,
                    bound,
                    &self.spec,
                    embedding,
                    effective,
                    self.question_id,
                    mode,
                    rng,
                )
                .map(|(scores, _)| scores),
            Arch::Capsule(a) => a.forward(tape, bound, &self.spec, embedding, effective, mode, rng),
        }
    }

    /// Forward plus the attention weight vectors (HAHNN only).
    pub fn forward_with_attention<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, AttentionTrace)> {
        let effective = effective_ids(ids)?;
        match &self.arch {
            Arch::Hahnn(a) => a.forward(
                tape,
                bound,
                &self.spec,
                bound[self.embedding_idx],
                effective,
                self.question_id,
                mode,
                rng,
            ),
            _ => Err(Error::Config(
                "attention traces are only available for hahnn".into(),
            )),
        }
    }

    /// Pipeline ids: strip trailing pads, then right-pad back up to the
    /// architecture minimum so short comments stay classifiable. The result
    /// is canonical, which keeps predictions invariant to input pad length.
    pub fn prepare_ids(&self, ids: &[u32]) -> Result<Vec<u32>> {
        let effective = effective_ids(ids)?;
        let mut v = effective[..effective.len().min(self.spec.max_len)].to_vec();
        let min = self.min_len();
        if v.len() < min {
            v.resize(min, PAD_ID);
        }
        Ok(v)
    }

    /// Class scores in eval mode: softmax probabilities for softmax heads
    /// (they sum to 1), capsule norms in `[0, 1)` for capsule heads.
    pub fn predict_proba(&self, ids: &[u32]) -> Result<[f64; NUM_CLASSES]> {
        let prepared = self.prepare_ids(ids)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let scores = self.forward_scores(&mut tape, &bound, &prepared, Mode::Eval, &mut rng)?;
        let row = match self.head_kind() {
            HeadKind::Softmax => {
                let sm = tape.softmax(scores);
                tape.values(sm).to_vec()
            }
            HeadKind::CapsuleNorms => tape.values(scores).to_vec(),
        };
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&row);
        Ok(out)
    }

    pub fn predict(&self, ids: &[u32]) -> Result<(Label, [f64; NUM_CLASSES])> {
        let proba = self.predict_proba(ids)?;
        let best = proba
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .map(|(i, _)| i)
            .expect("four scores");
        Ok((Label::from_index(best).expect("class index"), proba))
    }

    /// Layer-by-layer parameter listing as plain text.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.spec.variant.name());
        let _ = writeln!(out, "head: {:?}", self.head_kind());
        for p in self.params.items() {
            let _ = writeln!(
                out,
                "{:<28} {:?} = {} params{}",
                p.name,
                p.tensor.shape(),
                p.tensor.numel(),
                if p.trainable { "" } else { " (frozen)" }
            );
        }
        let _ = writeln!(out, "total parameters: {}", self.params.total_count());
        let _ = writeln!(
            out,
            "trainable parameters: {}",
            self.params.trainable_count()
        );
        out
    }
}

use rand::SeedableRng;

/// Strip trailing pad ids; an input with no real tokens is an error.
fn effective_ids(ids: &[u32]) -> Result<&[u32]> {
    match ids.iter().rposition(|&id| id != PAD_ID) {
        Some(last) => Ok(&ids[..=last]),
        None => Err(Error::EmptySequence),
    }
}

/// Dense layer parameter indices.
pub(crate) struct DenseIdx {
    pub w: usize,
    pub b: usize,
}

impl DenseIdx {
    pub(crate) fn build<R: Rng>(
        prefix: &str,
        inputs: usize,
        outputs: usize,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<DenseIdx> {
        let w = params.push(format!("{prefix}.w"), he_init(vec![inputs, outputs], inputs, rng)?);
        let b = params.push(format!("{prefix}.b"), Tensor::vector(vec![0.0; outputs]));
        Ok(DenseIdx { w, b })
    }

    /// `x . W + b`
    pub(crate) fn apply(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let xw = tape.matmul(x, bound[self.w])?;
        tape.add(xw, bound[self.b])
    }
}

#[cfg(test)]
mod tests;

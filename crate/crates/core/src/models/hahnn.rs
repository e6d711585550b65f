//! Hierarchical attention network. Each sentence is encoded by a
//! bidirectional word encoder whose states are augmented with convolutional
//! n-gram features over the word embeddings; word-level attention pools each
//! sentence to a vector, a bidirectional sentence encoder plus sentence-level
//! attention pools the document, and a dense head scores the four classes.
//!
//! Comments rarely keep sentence punctuation after filtering, so sentences
//! are fixed-length token chunks; a detached `?` token also closes one.

use super::cells::{CellIdx, CellKind};
use super::recurrent::bidirectional;
use super::{DenseIdx, ModelSpec, Parameters, WordEncoder};
use crate::error::Result;
use crate::tensor::{he_init, Mode, Tape, Tensor, Var};
use rand::Rng;

/// Attention weights observed during one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// One weight vector per sentence, over its words.
    pub word_weights: Vec<Vec<f64>>,
    /// One weight per sentence.
    pub sentence_weights: Vec<f64>,
}

struct AttnIdx {
    proj: DenseIdx,
    context: usize,
}

impl AttnIdx {
    fn build<R: Rng>(
        prefix: &str,
        input_dim: usize,
        context_dim: usize,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<AttnIdx> {
        Ok(AttnIdx {
            proj: DenseIdx::build(&format!("{prefix}.proj"), input_dim, context_dim, params, rng)?,
            context: params.push(
                format!("{prefix}.context"),
                he_init(vec![context_dim, 1], context_dim, rng)?,
            ),
        })
    }

    /// `u = tanh(W h + b)`, `alpha = softmax(u . context)`,
    /// `pooled = sum_t alpha_t h_t`. Returns the pooled row and the weights.
    fn pool(&self, tape: &mut Tape, bound: &[Var], states: Var) -> Result<(Var, Vec<f64>)> {
        let t_len = tape.shape(states)[0];
        let proj = self.proj.apply(tape, bound, states)?;
        let u = tape.tanh(proj);
        let scores = tape.matmul(u, bound[self.context])?; // [T, 1]
        let scores_row = tape.reshape(scores, vec![1, t_len])?;
        let alpha = tape.softmax(scores_row);
        let weights = tape.values(alpha).to_vec();
        let pooled = tape.matmul(alpha, states)?;
        Ok((pooled, weights))
    }
}

struct ConvBranch {
    kernels: usize,
    bias: usize,
    kernel_size: usize,
}

pub(crate) struct HahnnArch {
    word_fwd: CellIdx,
    word_bwd: CellIdx,
    conv: Vec<ConvBranch>,
    word_attn: AttnIdx,
    sent_fwd: CellIdx,
    sent_bwd: CellIdx,
    sent_attn: AttnIdx,
    head: DenseIdx,
}

impl HahnnArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<HahnnArch> {
        let attn = spec.attention.as_ref().expect("validated");
        let h = spec.hidden_units;
        let kind = match attn.word_encoder {
            WordEncoder::Gru => CellKind::Gru,
            WordEncoder::Lstm => CellKind::Lstm,
        };
        let word_fwd = CellIdx::build(kind, "word.forward", spec.embedding_dim, h, params, rng)?;
        let word_bwd = CellIdx::build(kind, "word.backward", spec.embedding_dim, h, params, rng)?;
        let mut conv = Vec::new();
        for &k in &attn.conv_filter_sizes {
            let fan_in = k * spec.embedding_dim;
            conv.push(ConvBranch {
                kernels: params.push(
                    format!("word.conv{k}.kernels"),
                    he_init(vec![k, spec.embedding_dim, attn.conv_filters], fan_in, rng)?,
                ),
                bias: params.push(
                    format!("word.conv{k}.bias"),
                    Tensor::vector(vec![0.0; attn.conv_filters]),
                ),
                kernel_size: k,
            });
        }
        let word_dim = 2 * h + attn.conv_filters * attn.conv_filter_sizes.len();
        let word_attn = AttnIdx::build("word.attention", word_dim, attn.word_context_dim, params, rng)?;
        let sent_fwd = CellIdx::build(kind, "sentence.forward", word_dim, h, params, rng)?;
        let sent_bwd = CellIdx::build(kind, "sentence.backward", word_dim, h, params, rng)?;
        let sent_attn = AttnIdx::build(
            "sentence.attention",
            2 * h,
            attn.sentence_context_dim,
            params,
            rng,
        )?;
        Ok(HahnnArch {
            word_fwd,
            word_bwd,
            conv,
            word_attn,
            sent_fwd,
            sent_bwd,
            sent_attn,
            head: DenseIdx::build("head", 2 * h, 4, params, rng)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        spec: &ModelSpec,
        embedding: Var,
        ids: &[u32],
        question_id: Option<u32>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, AttentionTrace)> {
        let attn = spec.attention.as_ref().expect("validated");
        let sentences = split_sentences(ids, attn.sentence_len, question_id);
        let mut trace = AttentionTrace {
            word_weights: Vec::with_capacity(sentences.len()),
            sentence_weights: Vec::new(),
        };

        let mut sentence_rows = Vec::with_capacity(sentences.len());
        for sentence in &sentences {
            let indices: Vec<usize> = sentence.iter().map(|&i| i as usize).collect();
            let emb = tape.gather(embedding, &indices)?;
            let emb = tape.dropout(emb, spec.dropout_p, mode, rng)?;
            let encoded = bidirectional(tape, bound, &self.word_fwd, &self.word_bwd, emb)?;

            // Same-length convolutional n-gram features alongside the
            // encoder states, one branch per filter size.
            let mut parts = vec![encoded];
            for branch in &self.conv {
                let k = branch.kernel_size;
                let before = (k - 1) / 2;
                let after = k - 1 - before;
                let padded = tape.zero_pad_rows(emb, before, after)?;
                let c = tape.conv1d(padded, bound[branch.kernels], 1, 1)?;
                let cb = tape.add(c, bound[branch.bias])?;
                parts.push(tape.relu(cb));
            }
            let words = tape.concat_cols(&parts)?;
            let (pooled, weights) = self.word_attn.pool(tape, bound, words)?;
            trace.word_weights.push(weights);
            sentence_rows.push(pooled);
        }

        let sent_seq = tape.stack_rows(&sentence_rows)?;
        let encoded = bidirectional(tape, bound, &self.sent_fwd, &self.sent_bwd, sent_seq)?;
        let (doc, weights) = self.sent_attn.pool(tape, bound, encoded)?;
        trace.sentence_weights = weights;
        let doc = tape.dropout(doc, spec.dropout_p, mode, rng)?;
        let scores = self.head.apply(tape, bound, doc)?;
        Ok((scores, trace))
    }
}

/// Cut an id sequence into sentences: fixed-length chunks, with a question
/// mark token also ending the current sentence.
pub(crate) fn split_sentences(
    ids: &[u32],
    sentence_len: usize,
    question_id: Option<u32>,
) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for &id in ids {
        current.push(id);
        let ends = current.len() >= sentence_len || question_id == Some(id);
        if ends {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

//! Recurrent classifiers: the RNN/LSTM/GRU baselines with a last-state
//! readout, the bidirectional LSTM with a time-distributed dense + flatten
//! readout, and the 2/3-layer stacked variants.

use super::cells::{CellIdx, CellKind};
use super::{DenseIdx, ModelSpec, Parameters, Variant};
use crate::error::Result;
use crate::tensor::{Mode, Tape, Var};
use rand::Rng;

fn cell_kind(variant: Variant) -> CellKind {
    match variant {
        Variant::Rnn => CellKind::Rnn,
        Variant::Gru | Variant::CnnGru => CellKind::Gru,
        _ => CellKind::Lstm,
    }
}

/// Embedding rows for the id sequence, with dropout in train mode.
pub(crate) fn embed_sequence<R: Rng>(
    tape: &mut Tape,
    embedding: Var,
    ids: &[u32],
    dropout_p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let indices: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let seq = tape.gather(embedding, &indices)?;
    tape.dropout(seq, dropout_p, mode, rng)
}

/// input -> embedding -> recurrent layer -> dense ReLU -> 4-way head.
/// The readout is the hidden state at the last non-pad timestep.
pub(crate) struct BaselineArch {
    cell: CellIdx,
    dense: DenseIdx,
    head: DenseIdx,
}

impl BaselineArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<BaselineArch> {
        let h = spec.hidden_units;
        Ok(BaselineArch {
            cell: CellIdx::build(
                cell_kind(spec.variant),
                "recurrent",
                spec.embedding_dim,
                h,
                params,
                rng,
            )?,
            dense: DenseIdx::build("dense", h, h, params, rng)?,
            head: DenseIdx::build("head", h, 4, params, rng)?,
        })
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        spec: &ModelSpec,
        embedding: Var,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let seq = embed_sequence(tape, embedding, ids, spec.dropout_p, mode, rng)?;
        let states = self.cell.run_over(tape, bound, seq, false)?;
        let last = *states.last().expect("non-empty sequence");
        let last = tape.dropout(last, spec.dropout_p, mode, rng)?;
        let pre = self.dense.apply(tape, bound, last)?;
        let act = tape.relu(pre);
        self.head.apply(tape, bound, act)
    }
}

/// Bidirectional LSTM: forward/backward states concatenated per timestep,
/// a shared per-timestep dense layer, then a flatten over the non-pad region
/// (zero-filled up to `max_len`) into the 4-way head.
pub(crate) struct BiLstmArch {
    fwd: CellIdx,
    bwd: CellIdx,
    td_dense: DenseIdx,
    head: DenseIdx,
}

impl BiLstmArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<BiLstmArch> {
        let h = spec.hidden_units;
        Ok(BiLstmArch {
            fwd: CellIdx::build(CellKind::Lstm, "forward", spec.embedding_dim, h, params, rng)?,
            bwd: CellIdx::build(CellKind::Lstm, "backward", spec.embedding_dim, h, params, rng)?,
            td_dense: DenseIdx::build("td_dense", 2 * h, h, params, rng)?,
            head: DenseIdx::build("head", spec.max_len * h, 4, params, rng)?,
        })
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        spec: &ModelSpec,
        embedding: Var,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let seq = embed_sequence(tape, embedding, ids, spec.dropout_p, mode, rng)?;
        let concat = bidirectional(tape, bound, &self.fwd, &self.bwd, seq)?;
        let concat = tape.dropout(concat, spec.dropout_p, mode, rng)?;
        flatten_head(tape, bound, &self.td_dense, &self.head, spec.max_len, concat)
    }
}

/// Run two copies of a cell in opposite time directions and concatenate
/// their states per timestep into `[T, 2h]`.
pub(crate) fn bidirectional(
    tape: &mut Tape,
    bound: &[Var],
    fwd: &CellIdx,
    bwd: &CellIdx,
    seq: Var,
) -> Result<Var> {
    let fwd_states = fwd.run_over(tape, bound, seq, false)?;
    let bwd_states = bwd.run_over(tape, bound, seq, true)?;
    let rows: Vec<Var> = fwd_states
        .iter()
        .zip(&bwd_states)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect::<Result<_>>()?;
    tape.stack_rows(&rows)
}

/// Per-timestep dense, zero-fill to `max_len` rows, flatten, 4-way head.
pub(crate) fn flatten_head(
    tape: &mut Tape,
    bound: &[Var],
    td_dense: &DenseIdx,
    head: &DenseIdx,
    max_len: usize,
    states: Var,
) -> Result<Var> {
    let t_len = tape.shape(states)[0];
    let dense = td_dense.apply(tape, bound, states)?;
    let padded = if t_len < max_len {
        tape.zero_pad_rows(dense, 0, max_len - t_len)?
    } else {
        dense
    };
    let cols = tape.shape(padded)[1];
    let flat = tape.reshape(padded, vec![1, max_len * cols])?;
    head.apply(tape, bound, flat)
}

pub(crate) enum StackedLayer {
    Uni(CellIdx),
    Bi(CellIdx, CellIdx),
}

/// Stacked LSTM / BiLSTM: each layer consumes the full state sequence of the
/// layer below; the readout matches the bidirectional model's head.
pub(crate) struct StackedArch {
    pub(crate) layers: Vec<StackedLayer>,
    pub(crate) td_dense: DenseIdx,
    pub(crate) head: DenseIdx,
}

impl StackedArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<StackedArch> {
        let h = spec.hidden_units;
        let (depth, bi) = match spec.variant {
            Variant::StackedLstm(d) => (d as usize, false),
            Variant::StackedBiLstm(d) => (d as usize, true),
            _ => unreachable!("stacked arch built for stacked variants"),
        };
        let mut layers = Vec::with_capacity(depth);
        let mut input_dim = spec.embedding_dim;
        for i in 0..depth {
            if bi {
                let fwd = CellIdx::build(
                    CellKind::Lstm,
                    &format!("layer{i}.forward"),
                    input_dim,
                    h,
                    params,
                    rng,
                )?;
                let bwd = CellIdx::build(
                    CellKind::Lstm,
                    &format!("layer{i}.backward"),
                    input_dim,
                    h,
                    params,
                    rng,
                )?;
                layers.push(StackedLayer::Bi(fwd, bwd));
                input_dim = 2 * h;
            } else {
                layers.push(StackedLayer::Uni(CellIdx::build(
                    CellKind::Lstm,
                    &format!("layer{i}"),
                    input_dim,
                    h,
                    params,
                    rng,
                )?));
                input_dim = h;
            }
        }
        Ok(StackedArch {
            layers,
            td_dense: DenseIdx::build("td_dense", input_dim, h, params, rng)?,
            head: DenseIdx::build("head", spec.max_len * h, 4, params, rng)?,
        })
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        spec: &ModelSpec,
        embedding: Var,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut seq = embed_sequence(tape, embedding, ids, spec.dropout_p, mode, rng)?;
        for layer in &self.layers {
            seq = match layer {
                StackedLayer::Uni(cell) => {
                    let states = cell.run_over(tape, bound, seq, false)?;
                    tape.stack_rows(&states)?
                }
                StackedLayer::Bi(fwd, bwd) => bidirectional(tape, bound, fwd, bwd, seq)?,
            };
        }
        let seq = tape.dropout(seq, spec.dropout_p, mode, rng)?;
        flatten_head(tape, bound, &self.td_dense, &self.head, spec.max_len, seq)
    }
}

//! CNN + recurrent hybrids: parallel convolution branches with max pooling
//! over the embedded sequence, channel-concatenated and fed as a sequence to
//! a GRU/LSTM/BiLSTM, then a 4-way head.

use super::cells::{CellIdx, CellKind};
use super::recurrent::embed_sequence;
use super::{DenseIdx, ModelSpec, Parameters, Variant};
use crate::error::Result;
use crate::tensor::{he_init, Mode, Tape, Tensor, Var};
use rand::Rng;

struct ConvBranch {
    kernels: usize,
    bias: usize,
}

enum Recurrent {
    Uni(CellIdx),
    Bi(CellIdx, CellIdx),
}

pub(crate) struct CnnArch {
    branches: Vec<ConvBranch>,
    recurrent: Recurrent,
    head: DenseIdx,
}

impl CnnArch {
    pub(crate) fn build<R: Rng>(
        spec: &ModelSpec,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<CnnArch> {
        let conv = spec.conv.as_ref().expect("validated");
        let mut branches = Vec::new();
        for (i, &k) in conv.kernel_sizes.iter().enumerate() {
            let fan_in = k * spec.embedding_dim;
            branches.push(ConvBranch {
                kernels: params.push(
                    format!("conv{i}.kernels"),
                    he_init(vec![k, spec.embedding_dim, conv.filters], fan_in, rng)?,
                ),
                bias: params.push(
                    format!("conv{i}.bias"),
                    Tensor::vector(vec![0.0; conv.filters]),
                ),
            });
        }
        let seq_dim = conv.filters * conv.kernel_sizes.len();
        let h = spec.hidden_units;
        let recurrent = match spec.variant {
            Variant::CnnBiLstm => Recurrent::Bi(
                CellIdx::build(CellKind::Lstm, "forward", seq_dim, h, params, rng)?,
                CellIdx::build(CellKind::Lstm, "backward", seq_dim, h, params, rng)?,
            ),
            _ => Recurrent::Uni(CellIdx::build(
                cell_kind(spec.variant),
                "recurrent",
                seq_dim,
                h,
                params,
                rng,
            )?),
        };
        let head_in = match recurrent {
            Recurrent::Bi(..) => 2 * h,
            Recurrent::Uni(_) => h,
        };
        Ok(CnnArch {
            branches,
            recurrent,
            head: DenseIdx::build("head", head_in, 4, params, rng)?,
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
        let conv = spec.conv.as_ref().expect("validated");
        let seq = embed_sequence(tape, embedding, ids, spec.dropout_p, mode, rng)?;

        // One conv + pool per kernel size; shorter branches decide the
        // common timeline and the longer ones are truncated to it.
        let mut pooled = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let c = tape.conv1d(seq, bound[branch.kernels], 1, conv.dilation)?;
            let cb = tape.add(c, bound[branch.bias])?;
            let act = tape.relu(cb);
            pooled.push(tape.maxpool1d(act, conv.pool_window)?);
        }
        let min_len = pooled
            .iter()
            .map(|&p| tape.shape(p)[0])
            .min()
            .expect("at least one branch");
        let aligned: Vec<Var> = pooled
            .into_iter()
            .map(|p| {
                if tape.shape(p)[0] > min_len {
                    tape.slice_rows(p, 0, min_len)
                } else {
                    Ok(p)
                }
            })
            .collect::<Result<_>>()?;
        let features = tape.concat_cols(&aligned)?;
        let features = tape.dropout(features, spec.dropout_p, mode, rng)?;

        let readout = match &self.recurrent {
            Recurrent::Uni(cell) => {
                let states = cell.run_over(tape, bound, features, false)?;
                *states.last().expect("non-empty")
            }
            Recurrent::Bi(fwd, bwd) => {
                let f = fwd.run_over(tape, bound, features, false)?;
                let b = bwd.run_over(tape, bound, features, true)?;
                // Final state of each direction: last timestep forward,
                // first timestep backward.
                tape.concat_cols(&[*f.last().expect("non-empty"), b[0]])?
            }
        };
        self.head.apply(tape, bound, readout)
    }
}

fn cell_kind(variant: Variant) -> CellKind {
    match variant {
        Variant::CnnGru => CellKind::Gru,
        _ => CellKind::Lstm,
    }
}

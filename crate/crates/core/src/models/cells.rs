//! Recurrent cell steps and the parameter plumbing shared by every
//! recurrent architecture.

use super::Parameters;
use crate::error::Result;
use crate::tensor::{he_init, Tape, Tensor, Var};
use rand::Rng;

/// Simple recurrence: `h' = tanh(x W + h U + b)`.
pub struct RnnGates {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

pub fn rnn_cell(tape: &mut Tape, g: &RnnGates, x: Var, h: Var) -> Result<Var> {
    let a = affine(tape, x, g.w, h, g.u, g.b)?;
    Ok(tape.tanh(a))
}

/// Gated recurrent unit: update gate `z`, reset gate `r`, candidate `h~`;
/// `h' = (1 - z) (*) h + z (*) h~`.
pub struct GruGates {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

pub fn gru_cell(tape: &mut Tape, g: &GruGates, x: Var, h: Var) -> Result<Var> {
    let z_pre = affine(tape, x, g.w_z, h, g.u_z, g.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = affine(tape, x, g.w_r, h, g.u_r, g.b_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = affine(tape, x, g.w_h, rh, g.u_h, g.b_h)?;
    let cand = tape.tanh(cand_pre);
    // (1 - z) (*) h + z (*) cand
    let neg_z = tape.scale(z, -1.0);
    let one_minus_z = tape.add_scalar(neg_z, 1.0);
    let keep = tape.mul(one_minus_z, h)?;
    let update = tape.mul(z, cand)?;
    tape.add(keep, update)
}

/// LSTM with input/forget/output gates and tanh candidate:
/// `c' = f (*) c + i (*) g`, `h' = o (*) tanh(c')`.
pub struct LstmGates {
    pub w_i: Var,
    pub u_i: Var,
    pub b_i: Var,
    pub w_f: Var,
    pub u_f: Var,
    pub b_f: Var,
    pub w_g: Var,
    pub u_g: Var,
    pub b_g: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub b_o: Var,
}

pub fn lstm_cell(
    tape: &mut Tape,
    g: &LstmGates,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let i_pre = affine(tape, x, g.w_i, h, g.u_i, g.b_i)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = affine(tape, x, g.w_f, h, g.u_f, g.b_f)?;
    let f = tape.sigmoid(f_pre);
    let g_pre = affine(tape, x, g.w_g, h, g.u_g, g.b_g)?;
    let cand = tape.tanh(g_pre);
    let o_pre = affine(tape, x, g.w_o, h, g.u_o, g.b_o)?;
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, cand)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// `x W + h U + b`
fn affine(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add(s, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    fn gate_names(&self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn => &["h"],
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["i", "f", "g", "o"],
        }
    }

    pub(crate) fn param_count(&self, input_dim: usize, hidden: usize) -> usize {
        self.gate_names().len() * (input_dim * hidden + hidden * hidden + hidden)
    }
}

/// Parameter indices for one recurrent cell (per-gate W, U, b).
pub(crate) struct CellIdx {
    kind: CellKind,
    w: Vec<usize>,
    u: Vec<usize>,
    b: Vec<usize>,
    hidden: usize,
}

impl CellIdx {
    pub(crate) fn build<R: Rng>(
        kind: CellKind,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        params: &mut Parameters,
        rng: &mut R,
    ) -> Result<CellIdx> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in kind.gate_names() {
            w.push(params.push(
                format!("{prefix}.w_{gate}"),
                he_init(vec![input_dim, hidden], input_dim, rng)?,
            ));
            u.push(params.push(
                format!("{prefix}.u_{gate}"),
                he_init(vec![hidden, hidden], hidden, rng)?,
            ));
            b.push(params.push(
                format!("{prefix}.b_{gate}"),
                Tensor::vector(vec![0.0; hidden]),
            ));
        }
        Ok(CellIdx {
            kind,
            w,
            u,
            b,
            hidden,
        })
    }

    /// Run the cell over a `[T, d]` sequence, producing the hidden state for
    /// every timestep in time order. `reverse` runs the recurrence from the
    /// last timestep backwards (the output remains time-indexed).
    pub(crate) fn run_over(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        seq: Var,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let t_len = tape.shape(seq)[0];
        let zero = tape.constant(Tensor::row(vec![0.0; self.hidden]));
        let mut h = zero;
        let mut c = zero;
        let mut out = vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let x = tape.select_row(seq, t)?;
            h = match self.kind {
                CellKind::Rnn => rnn_cell(tape, &self.rnn_gates(bound), x, h)?,
                CellKind::Gru => gru_cell(tape, &self.gru_gates(bound), x, h)?,
                CellKind::Lstm => {
                    let (hn, cn) = lstm_cell(tape, &self.lstm_gates(bound), x, h, c)?;
                    c = cn;
                    hn
                }
            };
            out[t] = Some(h);
        }
        Ok(out.into_iter().map(|v| v.expect("all steps run")).collect())
    }

    fn rnn_gates(&self, bound: &[Var]) -> RnnGates {
        RnnGates {
            w: bound[self.w[0]],
            u: bound[self.u[0]],
            b: bound[self.b[0]],
        }
    }

    fn gru_gates(&self, bound: &[Var]) -> GruGates {
        GruGates {
            w_z: bound[self.w[0]],
            u_z: bound[self.u[0]],
            b_z: bound[self.b[0]],
            w_r: bound[self.w[1]],
            u_r: bound[self.u[1]],
            b_r: bound[self.b[1]],
            w_h: bound[self.w[2]],
            u_h: bound[self.u[2]],
            b_h: bound[self.b[2]],
        }
    }

    fn lstm_gates(&self, bound: &[Var]) -> LstmGates {
        LstmGates {
            w_i: bound[self.w[0]],
            u_i: bound[self.u[0]],
            b_i: bound[self.b[0]],
            w_f: bound[self.w[1]],
            u_f: bound[self.u[1]],
            b_f: bound[self.b[1]],
            w_g: bound[self.w[2]],
            u_g: bound[self.u[2]],
            b_g: bound[self.b[2]],
            w_o: bound[self.w[3]],
            u_o: bound[self.u[3]],
            b_o: bound[self.b[3]],
        }
    }
}

//! Recurrent cells recorded on the tape: plain tanh RNN, gated recurrent
//! unit, and LSTM. Standard gate equations, column-vector convention.
//!
//! Parameters are registered once in the store and snapshotted onto a tape as
//! `Var`s per forward pass; reusing the snapshot across many cell invocations
//! keeps the tape small and accumulates shared-weight gradients correctly.

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use rand::Rng;

fn register_matrix(store: &mut ParameterStore, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<ParamId> {
    store.register(name, Tensor::glorot(rows, cols, rng))
}

fn register_bias(store: &mut ParameterStore, name: &str, rows: usize) -> Result<ParamId> {
    store.register(name, Tensor::zeros(rows, 1))
}

/// `h' = tanh(W x + U h + b)`.
pub struct RnnParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy)]
pub struct RnnVars {
    w_input: Var,
    w_hidden: Var,
    bias: Var,
}

impl RnnParams {
    pub fn register(store: &mut ParameterStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(RnnParams {
            w_input: register_matrix(store, &format!("{prefix}.w_input"), hidden, input, rng)?,
            w_hidden: register_matrix(store, &format!("{prefix}.w_hidden"), hidden, hidden, rng)?,
            bias: register_bias(store, &format!("{prefix}.bias"), hidden)?,
        })
    }

    pub fn vars(&self, tape: &mut Tape, store: &ParameterStore) -> RnnVars {
        RnnVars {
            w_input: tape.param(store, self.w_input),
            w_hidden: tape.param(store, self.w_hidden),
            bias: tape.param(store, self.bias),
        }
    }
}

pub fn rnn_cell(tape: &mut Tape, v: &RnnVars, h: Var, x: Var) -> Result<Var> {
    let wx = tape.matmul(v.w_input, x)?;
    let uh = tape.matmul(v.w_hidden, h)?;
    let s = tape.add(wx, uh)?;
    let z = tape.add(s, v.bias)?;
    Ok(tape.tanh(z))
}

/// Gated recurrent unit:
/// `z = sigma(Wz x + Uz h + bz)`, `r = sigma(Wr x + Ur h + br)`,
/// `c = tanh(Wc x + Uc (r . h) + bc)`, `h' = z . h + (1 - z) . c`.
pub struct GruParams {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
}

#[derive(Clone, Copy)]
pub struct GruVars {
    w_update: Var,
    u_update: Var,
    b_update: Var,
    w_reset: Var,
    u_reset: Var,
    b_reset: Var,
    w_cand: Var,
    u_cand: Var,
    b_cand: Var,
}

impl GruParams {
    pub fn register(store: &mut ParameterStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(GruParams {
            w_update: register_matrix(store, &format!("{prefix}.w_update"), hidden, input, rng)?,
            u_update: register_matrix(store, &format!("{prefix}.u_update"), hidden, hidden, rng)?,
            b_update: register_bias(store, &format!("{prefix}.b_update"), hidden)?,
            w_reset: register_matrix(store, &format!("{prefix}.w_reset"), hidden, input, rng)?,
            u_reset: register_matrix(store, &format!("{prefix}.u_reset"), hidden, hidden, rng)?,
            b_reset: register_bias(store, &format!("{prefix}.b_reset"), hidden)?,
            w_cand: register_matrix(store, &format!("{prefix}.w_cand"), hidden, input, rng)?,
            u_cand: register_matrix(store, &format!("{prefix}.u_cand"), hidden, hidden, rng)?,
            b_cand: register_bias(store, &format!("{prefix}.b_cand"), hidden)?,
        })
    }

    pub fn vars(&self, tape: &mut Tape, store: &ParameterStore) -> GruVars {
        GruVars {
            w_update: tape.param(store, self.w_update),
            u_update: tape.param(store, self.u_update),
            b_update: tape.param(store, self.b_update),
            w_reset: tape.param(store, self.w_reset),
            u_reset: tape.param(store, self.u_reset),
            b_reset: tape.param(store, self.b_reset),
            w_cand: tape.param(store, self.w_cand),
            u_cand: tape.param(store, self.u_cand),
            b_cand: tape.param(store, self.b_cand),
        }
    }
}

fn gate(tape: &mut Tape, w: Var, u: Var, b: Var, x: Var, h: Var) -> Result<Var> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

pub fn gru_cell(tape: &mut Tape, v: &GruVars, h: Var, x: Var) -> Result<Var> {
    let hidden = tape.value(h).rows;
    let z_pre = gate(tape, v.w_update, v.u_update, v.b_update, x, h)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, v.w_reset, v.u_reset, v.b_reset, x, h)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.hadamard(r, h)?;
    let cand_pre = gate(tape, v.w_cand, v.u_cand, v.b_cand, x, rh)?;
    let cand = tape.tanh(cand_pre);
    let ones = tape.leaf(Tensor::column(&vec![1.0; hidden]));
    let zc = tape.sub(ones, z)?;
    let keep = tape.hadamard(z, h)?;
    let take = tape.hadamard(zc, cand)?;
    tape.add(keep, take)
}

/// LSTM: input/forget/output gates plus candidate, cell state carried along.
pub struct LstmParams {
    pub w_input: ParamId,
    pub u_input: ParamId,
    pub b_input: ParamId,
    pub w_forget: ParamId,
    pub u_forget: ParamId,
    pub b_forget: ParamId,
    pub w_output: ParamId,
    pub u_output: ParamId,
    pub b_output: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
}

#[derive(Clone, Copy)]
pub struct LstmVars {
    w_input: Var,
    u_input: Var,
    b_input: Var,
    w_forget: Var,
    u_forget: Var,
    b_forget: Var,
    w_output: Var,
    u_output: Var,
    b_output: Var,
    w_cand: Var,
    u_cand: Var,
    b_cand: Var,
}

impl LstmParams {
    pub fn register(store: &mut ParameterStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(LstmParams {
            w_input: register_matrix(store, &format!("{prefix}.w_input"), hidden, input, rng)?,
            u_input: register_matrix(store, &format!("{prefix}.u_input"), hidden, hidden, rng)?,
            b_input: register_bias(store, &format!("{prefix}.b_input"), hidden)?,
            w_forget: register_matrix(store, &format!("{prefix}.w_forget"), hidden, input, rng)?,
            u_forget: register_matrix(store, &format!("{prefix}.u_forget"), hidden, hidden, rng)?,
            b_forget: register_bias(store, &format!("{prefix}.b_forget"), hidden)?,
            w_output: register_matrix(store, &format!("{prefix}.w_output"), hidden, input, rng)?,
            u_output: register_matrix(store, &format!("{prefix}.u_output"), hidden, hidden, rng)?,
            b_output: register_bias(store, &format!("{prefix}.b_output"), hidden)?,
            w_cand: register_matrix(store, &format!("{prefix}.w_cand"), hidden, input, rng)?,
            u_cand: register_matrix(store, &format!("{prefix}.u_cand"), hidden, hidden, rng)?,
            b_cand: register_bias(store, &format!("{prefix}.b_cand"), hidden)?,
        })
    }

    pub fn vars(&self, tape: &mut Tape, store: &ParameterStore) -> LstmVars {
        LstmVars {
            w_input: tape.param(store, self.w_input),
            u_input: tape.param(store, self.u_input),
            b_input: tape.param(store, self.b_input),
            w_forget: tape.param(store, self.w_forget),
            u_forget: tape.param(store, self.u_forget),
            b_forget: tape.param(store, self.b_forget),
            w_output: tape.param(store, self.w_output),
            u_output: tape.param(store, self.u_output),
            b_output: tape.param(store, self.b_output),
            w_cand: tape.param(store, self.w_cand),
            u_cand: tape.param(store, self.u_cand),
            b_cand: tape.param(store, self.b_cand),
        }
    }
}

pub fn lstm_cell(tape: &mut Tape, v: &LstmVars, h: Var, cell: Var, x: Var) -> Result<(Var, Var)> {
    let i_pre = gate(tape, v.w_input, v.u_input, v.b_input, x, h)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = gate(tape, v.w_forget, v.u_forget, v.b_forget, x, h)?;
    let f = tape.sigmoid(f_pre);
    let o_pre = gate(tape, v.w_output, v.u_output, v.b_output, x, h)?;
    let o = tape.sigmoid(o_pre);
    let g_pre = gate(tape, v.w_cand, v.u_cand, v.b_cand, x, h)?;
    let g = tape.tanh(g_pre);
    let keep = tape.hadamard(f, cell)?;
    let add = tape.hadamard(i, g)?;
    let cell_next = tape.add(keep, add)?;
    let ct = tape.tanh(cell_next);
    let h_next = tape.hadamard(o, ct)?;
    Ok((h_next, cell_next))
}

//! Trainable neural node programs.
//!
//! Each delivered message feeds a recurrent cell; the updated state drives a
//! message head (affine + tanh) whose output is broadcast, optionally behind
//! a send gate. Gradients flow across nodes because an emission's tape
//! variable is looked up again — via the engine's fan-out `tag` — when a copy
//! of it is delivered to a neighbor, so the backward sweep of one run's tape
//! walks the whole delivery trace in reverse.

use crate::autodiff::cells::{
    gru_cell, lstm_cell, rnn_cell, GruParams, GruVars, LstmParams, LstmVars, RnnParams, RnnVars,
};
use crate::autodiff::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::engine::{Emission, Message, NodeProgram, ProtocolBits, Step};
use crate::error::{AmpError, Result};
use crate::graph::{Graph, NodeId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HaltingKind {
    None,
    /// Additive halting: stop once the summed probabilities reach
    /// `1 - epsilon`; the readout is the probability-weighted state average,
    /// the last weight being the remainder.
    Act { epsilon: f64 },
    /// Multiplicative halting: continue-probabilities multiply; stop when the
    /// product falls below `epsilon`.
    Iter { epsilon: f64 },
}

impl HaltingKind {
    pub fn enabled(&self) -> bool {
        !matches!(self, HaltingKind::None)
    }
}

/// Architecture of one trainable node program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpCellConfig {
    pub state_width: usize,
    pub message_width: usize,
    pub cell: CellKind,
    pub skip_connection: bool,
    pub halting: HaltingKind,
    pub send_gate: bool,
}

impl AmpCellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.message_width < 1 || self.state_width < 1 {
            return Err(AmpError::contract("state and message widths must be >= 1".to_string()));
        }
        match self.halting {
            HaltingKind::Act { epsilon } | HaltingKind::Iter { epsilon } => {
                if !(epsilon > 0.0 && epsilon <= 0.5) {
                    return Err(AmpError::contract(format!("halting epsilon must be in (0, 0.5], got {epsilon}")));
                }
            }
            HaltingKind::None => {}
        }
        Ok(())
    }
}

enum CellParams {
    Rnn(RnnParams),
    Gru(GruParams),
    Lstm(LstmParams),
}

struct AffineParams {
    weight: ParamId,
    bias: ParamId,
}

impl AffineParams {
    fn register(store: &mut ParameterStore, prefix: &str, out: usize, input: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(AffineParams {
            weight: store.register(&format!("{prefix}.weight"), Tensor::glorot(out, input, rng))?,
            bias: store.register(&format!("{prefix}.bias"), Tensor::zeros(out, 1))?,
        })
    }
}

/// A full trainable model: cell + input embedding + message/gate/halting
/// heads + class readout, with its parameter store.
pub struct AmpModel {
    pub config: AmpCellConfig,
    pub input_width: usize,
    pub logits_width: usize,
    pub store: ParameterStore,
    cell: CellParams,
    embed: AffineParams,
    message_head: AffineParams,
    gate_head: Option<AffineParams>,
    halt_head: Option<AffineParams>,
    readout_head: AffineParams,
}

impl AmpModel {
    /// Registers all parameters with a seeded initialization.
    pub fn new(config: AmpCellConfig, input_width: usize, logits_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let cell = match config.cell {
            CellKind::Rnn => CellParams::Rnn(RnnParams::register(
                &mut store,
                "cell",
                config.message_width,
                config.state_width,
                &mut rng,
            )?),
            CellKind::Gru => CellParams::Gru(GruParams::register(
                &mut store,
                "cell",
                config.message_width,
                config.state_width,
                &mut rng,
            )?),
            CellKind::Lstm => CellParams::Lstm(LstmParams::register(
                &mut store,
                "cell",
                config.message_width,
                config.state_width,
                &mut rng,
            )?),
        };
        let embed = AffineParams::register(&mut store, "embed", config.state_width, input_width, &mut rng)?;
        let message_head = AffineParams::register(&mut store, "message", config.message_width, config.state_width, &mut rng)?;
        let gate_head = if config.send_gate {
            Some(AffineParams::register(&mut store, "gate", 1, config.state_width, &mut rng)?)
        } else {
            None
        };
        let halt_head = if config.halting.enabled() {
            Some(AffineParams::register(&mut store, "halt", 1, config.state_width, &mut rng)?)
        } else {
            None
        };
        let readout_head = AffineParams::register(&mut store, "readout", logits_width, config.state_width, &mut rng)?;
        Ok(AmpModel {
            config,
            input_width,
            logits_width,
            store,
            cell,
            embed,
            message_head,
            gate_head,
            halt_head,
            readout_head,
        })
    }
}

/// On-disk model description: architecture plus the initialization seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfigFile {
    pub cell: CellKind,
    pub state_width: usize,
    pub message_width: usize,
    pub halting: HaltingKind,
    pub skip_connection: bool,
    pub send_gate: bool,
    pub seed: u64,
}

impl ModelConfigFile {
    pub fn cell_config(&self) -> AmpCellConfig {
        AmpCellConfig {
            state_width: self.state_width,
            message_width: self.message_width,
            cell: self.cell,
            skip_connection: self.skip_connection,
            halting: self.halting,
            send_gate: self.send_gate,
        }
    }

    pub fn build(&self, input_width: usize, logits_width: usize) -> Result<AmpModel> {
        AmpModel::new(self.cell_config(), input_width, logits_width, self.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    version: u32,
    config: ModelConfigFile,
    input_width: usize,
    logits_width: usize,
    params: serde_json::Value,
}

impl AmpModel {
    /// Writes the architecture plus a versioned parameter checkpoint.
    pub fn save(&self, config: &ModelConfigFile, mut out: impl std::io::Write) -> Result<()> {
        let mut params_buf = Vec::new();
        crate::autodiff::save_checkpoint(&self.store, &mut params_buf)?;
        let ckpt = ModelCheckpoint {
            version: 1,
            config: config.clone(),
            input_width: self.input_width,
            logits_width: self.logits_width,
            params: serde_json::from_slice(&params_buf)?,
        };
        serde_json::to_writer(&mut out, &ckpt)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint, restoring parameter values.
    pub fn load(input: impl std::io::BufRead) -> Result<(Self, ModelConfigFile)> {
        let ckpt: ModelCheckpoint = serde_json::from_reader(input)?;
        if ckpt.version != 1 {
            return Err(AmpError::invalid(format!("unsupported model checkpoint version {}", ckpt.version)));
        }
        let mut model = ckpt.config.build(ckpt.input_width, ckpt.logits_width)?;
        let params_buf = serde_json::to_vec(&ckpt.params)?;
        let loaded = crate::autodiff::load_checkpoint(std::io::BufReader::new(&params_buf[..]))?;
        for name in loaded.names().map(String::from).collect::<Vec<_>>() {
            let src = loaded.id_of(&name).unwrap();
            let dst = model
                .store
                .id_of(&name)
                .ok_or_else(|| AmpError::contract(format!("checkpoint parameter {name} not in architecture")))?;
            model.store.set_value(dst, loaded.value(src).clone())?;
        }
        Ok((model, ckpt.config))
    }
}

enum CellVars {
    Rnn(RnnVars),
    Gru(GruVars),
    Lstm(LstmVars),
}

struct AffineVars {
    weight: Var,
    bias: Var,
}

impl AffineVars {
    fn of(p: &AffineParams, tape: &mut Tape, store: &ParameterStore) -> Self {
        AffineVars {
            weight: tape.param(store, p.weight),
            bias: tape.param(store, p.bias),
        }
    }

    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.affine(self.weight, x, self.bias)
    }
}

/// Per-node state of a neural run: tape references plus halting bookkeeping.
#[derive(Debug, Clone)]
pub struct NeuralState {
    h: Var,
    lstm_cell: Option<Var>,
    halted: bool,
    /// ACT: running sum of halting probabilities. Iter: running product of
    /// continue-probabilities (starts at 1).
    cumulative: f64,
    cumulative_var: Var,
    weighted: Var,
    received: u64,
}

impl NeuralState {
    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn messages_received(&self) -> u64 {
        self.received
    }
}

/// Engine program for one tape. Reusable across several runs of the same
/// graph task (run embeddings can then be pooled on the shared tape).
pub struct AmpProgram<'m> {
    model: &'m AmpModel,
    store: &'m ParameterStore,
    pub tape: Tape,
    cell_vars: CellVars,
    embed: AffineVars,
    message_head: AffineVars,
    gate_head: Option<AffineVars>,
    halt_head: Option<AffineVars>,
    readout_head: AffineVars,
    emitted: BTreeMap<u64, Var>,
    next_tag: u64,
}

impl<'m> Clone for AmpProgram<'m> {
    fn clone(&self) -> Self {
        // A clone is a fresh program over a fresh tape, not a copy of the
        // recorded history; used by run_all_starts-style fan-out.
        AmpProgram::new(self.model, self.store)
    }
}

impl<'m> AmpProgram<'m> {
    /// `store` is usually `&model.store`, but evaluation against a parameter
    /// snapshot may pass a different one with identical layout.
    pub fn new(model: &'m AmpModel, store: &'m ParameterStore) -> Self {
        let mut tape = Tape::new();
        let cell_vars = match &model.cell {
            CellParams::Rnn(p) => CellVars::Rnn(p.vars(&mut tape, store)),
            CellParams::Gru(p) => CellVars::Gru(p.vars(&mut tape, store)),
            CellParams::Lstm(p) => CellVars::Lstm(p.vars(&mut tape, store)),
        };
        let embed = AffineVars::of(&model.embed, &mut tape, store);
        let message_head = AffineVars::of(&model.message_head, &mut tape, store);
        let gate_head = model.gate_head.as_ref().map(|p| AffineVars::of(p, &mut tape, store));
        let halt_head = model.halt_head.as_ref().map(|p| AffineVars::of(p, &mut tape, store));
        let readout_head = AffineVars::of(&model.readout_head, &mut tape, store);
        AmpProgram {
            model,
            store,
            tape,
            cell_vars,
            embed,
            message_head,
            gate_head,
            halt_head,
            readout_head,
            emitted: BTreeMap::new(),
            next_tag: 1,
        }
    }

    fn message_input(&mut self, message: &Message) -> Result<Var> {
        if message.sender.is_none() {
            // The origin marker: a zero payload, never recorded as an emission.
            return Ok(self.tape.zeros(self.model.config.message_width, 1));
        }
        self.emitted
            .get(&message.tag)
            .copied()
            .ok_or_else(|| AmpError::contract(format!("message tag {} has no recorded emission", message.tag)))
    }

    /// Final representation a readout should see: the raw state for plain
    /// cells; for halting cells the weighted state, with the remainder weight
    /// applied to the last state when the node never reached its threshold.
    pub fn final_representation(&mut self, state: &NeuralState) -> Result<Var> {
        match self.model.config.halting {
            HaltingKind::None => Ok(state.h),
            HaltingKind::Act { .. } => {
                if state.halted {
                    Ok(state.weighted)
                } else {
                    let one = self.tape.scalar(1.0);
                    let remainder = self.tape.sub(one, state.cumulative_var)?;
                    let tail = self.tape.scale_by(state.h, remainder)?;
                    self.tape.add(state.weighted, tail)
                }
            }
            HaltingKind::Iter { .. } => {
                if state.halted {
                    Ok(state.weighted)
                } else {
                    let tail = self.tape.scale_by(state.h, state.cumulative_var)?;
                    self.tape.add(state.weighted, tail)
                }
            }
        }
    }

    /// Class logits for one node.
    pub fn readout(&mut self, state: &NeuralState) -> Result<Var> {
        let repr = self.final_representation(state)?;
        self.readout_head.apply(&mut self.tape, repr)
    }

    /// Mean of per-run embeddings followed by the readout head.
    pub fn pool_runs(&mut self, embeddings: &[Var]) -> Result<Var> {
        if embeddings.is_empty() {
            return Err(AmpError::invalid("pool_runs needs at least one run".to_string()));
        }
        let mut acc = embeddings[0];
        for &e in &embeddings[1..] {
            acc = self.tape.add(acc, e)?;
        }
        let mean = self.tape.scale_const(acc, 1.0 / embeddings.len() as f64);
        self.readout_head.apply(&mut self.tape, mean)
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl<'m> NodeProgram for AmpProgram<'m> {
    type State = NeuralState;

    fn payload_width(&self) -> usize {
        self.model.config.message_width
    }

    fn init_state(&mut self, g: &Graph, v: NodeId) -> NeuralState {
        let x = self.tape.leaf(Tensor::column(g.features(v)));
        let h = self
            .embed
            .apply(&mut self.tape, x)
            .expect("embedding width checked at model construction");
        let start_cumulative = match self.model.config.halting {
            HaltingKind::Iter { .. } => 1.0,
            _ => 0.0,
        };
        let cumulative_var = self.tape.scalar(start_cumulative);
        let weighted = self.tape.zeros(self.model.config.state_width, 1);
        NeuralState {
            h,
            lstm_cell: matches!(self.model.config.cell, CellKind::Lstm)
                .then(|| self.tape.zeros(self.model.config.state_width, 1)),
            halted: false,
            cumulative: start_cumulative,
            cumulative_var,
            weighted,
            received: 0,
        }
    }

    fn on_message(&mut self, _g: &Graph, v: NodeId, state: &NeuralState, message: &Message) -> Result<Step<NeuralState>> {
        if state.halted {
            return Ok(Step {
                state: state.clone(),
                emissions: Vec::new(),
                halted: true,
            });
        }
        let mut st = state.clone();
        st.received += 1;
        let x = self.message_input(message)?;

        // Cell update, optional skip connection.
        let mut h_next = match &self.cell_vars {
            CellVars::Rnn(vars) => rnn_cell(&mut self.tape, vars, st.h, x)?,
            CellVars::Gru(vars) => gru_cell(&mut self.tape, vars, st.h, x)?,
            CellVars::Lstm(vars) => {
                let (h2, c2) = lstm_cell(&mut self.tape, vars, st.h, st.lstm_cell.unwrap(), x)?;
                st.lstm_cell = Some(c2);
                h2
            }
        };
        if self.model.config.skip_connection {
            h_next = self.tape.add(h_next, st.h)?;
        }
        if !self.tape.value(h_next).is_finite() {
            return Err(AmpError::NumericFailure {
                step: 0,
                message: format!("non-finite state at node {v}"),
            });
        }
        st.h = h_next;

        // Halting bookkeeping.
        match self.model.config.halting {
            HaltingKind::None => {}
            HaltingKind::Act { epsilon } => {
                let head = self.halt_head.as_ref().unwrap();
                let p_pre = head.apply(&mut self.tape, st.h)?;
                let p = self.tape.sigmoid(p_pre);
                let p_val = self.tape.value(p).item();
                if st.cumulative + p_val >= 1.0 - epsilon {
                    // Halt; the final weight is the remainder, so the weights
                    // over all consumed states sum to exactly one.
                    let one = self.tape.scalar(1.0);
                    let remainder = self.tape.sub(one, st.cumulative_var)?;
                    let tail = self.tape.scale_by(st.h, remainder)?;
                    st.weighted = self.tape.add(st.weighted, tail)?;
                    st.cumulative = 1.0;
                    st.cumulative_var = self.tape.scalar(1.0);
                    st.halted = true;
                } else {
                    let term = self.tape.scale_by(st.h, p)?;
                    st.weighted = self.tape.add(st.weighted, term)?;
                    st.cumulative_var = self.tape.add(st.cumulative_var, p)?;
                    st.cumulative += p_val;
                }
            }
            HaltingKind::Iter { epsilon } => {
                let head = self.halt_head.as_ref().unwrap();
                let c_pre = head.apply(&mut self.tape, st.h)?;
                let confidence = self.tape.sigmoid(c_pre);
                let c_val = self.tape.value(confidence).item();
                // Weight of this state: c_k * prod_{j<k} (1 - c_j).
                let weight = self.tape.hadamard(confidence, st.cumulative_var)?;
                let term = self.tape.scale_by(st.h, weight)?;
                st.weighted = self.tape.add(st.weighted, term)?;
                let one = self.tape.scalar(1.0);
                let keep_going = self.tape.sub(one, confidence)?;
                st.cumulative_var = self.tape.hadamard(st.cumulative_var, keep_going)?;
                st.cumulative *= 1.0 - c_val;
                if st.cumulative < epsilon {
                    st.halted = true;
                }
            }
        }

        // Message head; a node emits even on its halting step, then freezes.
        let mut emissions = Vec::new();
        let mut send = true;
        if let Some(gate) = &self.gate_head {
            let g_pre = gate.apply(&mut self.tape, st.h)?;
            let g = self.tape.sigmoid(g_pre);
            send = self.tape.value(g).item() >= 0.5;
        }
        if send {
            let m_pre = self.message_head.apply(&mut self.tape, st.h)?;
            let m = self.tape.tanh(m_pre);
            let tag = self.next_tag;
            self.next_tag += 1;
            self.emitted.insert(tag, m);
            emissions.push(Emission {
                payload: self.tape.value(m).data.clone(),
                protocol_bits: ProtocolBits::NONE,
                tag,
            });
        }

        let halted = st.halted;
        Ok(Step {
            state: st,
            emissions,
            halted,
        })
    }
}

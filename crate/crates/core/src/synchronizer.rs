//! Synchronizer node programs: asynchronous message passing that reproduces
//! the synchronous GNN of [`crate::sync_gnn`] exactly.
//!
//! Two programs live here.
//!
//! [`sync_transition`] (wrapped by [`VerbatimSynchronizer`]) is the literal
//! pulse/safe/origin update table: state `(s, w, u, l)`, rows evaluated
//! top-down. It is kept for unit-level and trace-level fidelity and is sound
//! for single-layer runs, but its counters conflate rounds once messages from
//! adjacent rounds interleave, which random (or even constant) delays produce
//! for deeper models.
//!
//! [`RoundSynchronizer`] is the corrected program used by [`simulate`]: the
//! same message vocabulary (each message carries the sender's state plus
//! exactly one of pulse/safe/origin), but with exact per-round counting and a
//! one-round buffer for pulses that arrive before the current round closes.
//! Its guarantees hold under arbitrary finite delays:
//!
//! - a pulse for round k+1 can reach a node only after that node finished
//!   accumulating round k (the sender needed our round-k pulse first), so any
//!   pulse arriving mid-accumulation belongs to the current round and any
//!   pulse arriving after the update belongs to the next round;
//! - a safe announcement for round k can reach a node only after that node
//!   started round k, and never two rounds ahead;
//! - therefore phase (accumulating vs. awaiting safes) routes every message,
//!   and no round information is needed on the wire.

use crate::engine::{self, DelayModel, Emission, HaltReason, Message, NodeProgram, ProtocolBits, RunConfig, Step};
use crate::error::{AmpError, Result};
use crate::graph::{Graph, NodeId};
use crate::sync_gnn::{LayerWeights, SyncGnn};
use serde::{Deserialize, Serialize};

/// Exclusive coordination bit of a synchronizer message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncBit {
    Pulse,
    Safe,
    Origin,
}

/// A synchronizer message: the sender's old state plus one coordination bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMessage {
    pub payload: Vec<f64>,
    pub bit: SyncBit,
}

/// The four-field synchronizer state the literal update table operates on:
/// accumulating state `s`, messages still awaited this pulse `w`, unsafe
/// neighbors (incl. self) `u`, and layers left `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncState {
    pub s: Vec<f64>,
    pub w: usize,
    pub u: usize,
    pub l: usize,
}

impl SyncState {
    pub fn initial(features: &[f64], layers: usize) -> Self {
        SyncState {
            s: features.to_vec(),
            w: 0,
            u: 0,
            l: layers,
        }
    }
}

fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// The literal update table, rows evaluated top-down:
///
/// | condition  | s'              | w'   | u'  | l'  | message |
/// |------------|-----------------|------|-----|-----|---------|
/// | l = 0      | s               | w    | u   | l   | none    |
/// | origin     | s               | D-1  | D   | l   | pulse   |
/// | u = 0      | m               | D-2  | D   | l   | pulse   |
/// | safe       | s               | w    | u-1 | l   | none    |
/// | w = 0      | ReLU(W(s+m))    | 0    | u-1 | l-1 | safe    |
/// | pulse      | s+m             | w-1  | u   | l   | none    |
///
/// Emitted messages carry the node's old state. `w' = D-2` saturates at 0 so
/// degree-1 nodes stay in range. Exactly one bit per message is required.
pub fn sync_transition(
    state: &SyncState,
    msg: &SyncMessage,
    degree: usize,
    weights: &LayerWeights,
) -> Result<(SyncState, Option<SyncMessage>)> {
    if msg.payload.len() != state.s.len() {
        return Err(AmpError::contract(format!(
            "message width {} != state width {}",
            msg.payload.len(),
            state.s.len()
        )));
    }
    if degree < 1 {
        return Err(AmpError::invalid("transition requires degree >= 1".to_string()));
    }
    let old = state.s.clone();
    let out = |bit: SyncBit| Some(SyncMessage { payload: old.clone(), bit });

    if state.l == 0 {
        return Ok((state.clone(), None));
    }
    if msg.bit == SyncBit::Origin {
        return Ok((
            SyncState {
                s: state.s.clone(),
                w: degree - 1,
                u: degree,
                l: state.l,
            },
            out(SyncBit::Pulse),
        ));
    }
    if state.u == 0 {
        return Ok((
            SyncState {
                s: msg.payload.clone(),
                w: degree.saturating_sub(2),
                u: degree,
                l: state.l,
            },
            out(SyncBit::Pulse),
        ));
    }
    if msg.bit == SyncBit::Safe {
        return Ok((
            SyncState {
                s: state.s.clone(),
                w: state.w,
                u: state.u - 1,
                l: state.l,
            },
            None,
        ));
    }
    if state.w == 0 {
        return Ok((
            SyncState {
                s: weights.apply(&vec_add(&state.s, &msg.payload)),
                w: 0,
                u: state.u - 1,
                l: state.l - 1,
            },
            out(SyncBit::Safe),
        ));
    }
    if msg.bit == SyncBit::Pulse {
        return Ok((
            SyncState {
                s: vec_add(&state.s, &msg.payload),
                w: state.w - 1,
                u: state.u,
                l: state.l,
            },
            None,
        ));
    }
    Err(AmpError::protocol(format!("no row matches state {state:?} and message {msg:?}")))
}

fn bit_of(message: &Message) -> Result<SyncBit> {
    let bits = message.protocol_bits;
    if bits.count() != 1 {
        return Err(AmpError::protocol(format!(
            "synchronizer messages carry exactly one bit, got {:?}",
            bits.names()
        )));
    }
    if bits.contains(ProtocolBits::PULSE) {
        Ok(SyncBit::Pulse)
    } else if bits.contains(ProtocolBits::SAFE) {
        Ok(SyncBit::Safe)
    } else if bits.contains(ProtocolBits::ORIGIN) {
        Ok(SyncBit::Origin)
    } else {
        Err(AmpError::protocol("unknown synchronizer bit".to_string()))
    }
}

fn bits_of(bit: SyncBit) -> ProtocolBits {
    match bit {
        SyncBit::Pulse => ProtocolBits::PULSE,
        SyncBit::Safe => ProtocolBits::SAFE,
        SyncBit::Origin => ProtocolBits::ORIGIN,
    }
}

/// [`sync_transition`] wrapped as an engine program, one emission per step.
/// Faithful to the table, including the origin-node asymmetry (the origin's
/// own features stay in its first-round sum).
#[derive(Clone)]
pub struct VerbatimSynchronizer {
    pub model: SyncGnn,
}

impl NodeProgram for VerbatimSynchronizer {
    type State = SyncState;

    fn payload_width(&self) -> usize {
        self.model.dim
    }

    fn init_state(&mut self, g: &Graph, v: NodeId) -> SyncState {
        SyncState::initial(g.features(v), self.model.depth())
    }

    fn on_message(&mut self, g: &Graph, v: NodeId, state: &SyncState, message: &Message) -> Result<Step<SyncState>> {
        if state.l == 0 {
            return Ok(Step::quiet(state.clone()));
        }
        let layer = &self.model.layers[self.model.depth() - state.l];
        let msg = SyncMessage {
            payload: message.payload.clone(),
            bit: bit_of(message)?,
        };
        let (next, emitted) = sync_transition(state, &msg, g.degree(v), layer)?;
        let emissions = emitted
            .map(|m| vec![Emission::new(m.payload, bits_of(m.bit))])
            .unwrap_or_default();
        Ok(Step {
            state: next,
            emissions,
            halted: false,
        })
    }
}

/// Whether the origin node's own input features stay in its first-round sum
/// (the literal table behavior) or are excluded like every other node's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OriginMode {
    /// Origin accumulates only neighbor pulses, matching the synchronous model.
    Corrected,
    /// Origin keeps its own features in the round-1 sum.
    Verbatim,
}

/// Per-node state of the corrected synchronizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// Committed state, or the partial sum of the round being accumulated.
    pub s: Vec<f64>,
    /// Sum of next-round pulses that arrived before this round closed.
    buffer: Vec<f64>,
    buffered: usize,
    /// Pulses still to consume for the current round.
    pulses_awaited: usize,
    /// Safe announcements still to consume before the round closes.
    safes_awaited: usize,
    /// Layers (rounds) left to simulate.
    pub layers_left: usize,
}

/// Pulse/safe synchronizer with exact per-round counting. See the module docs
/// for why the early-pulse buffer is required.
#[derive(Clone)]
pub struct RoundSynchronizer {
    pub model: SyncGnn,
    pub origin_mode: OriginMode,
}

impl RoundSynchronizer {
    pub fn new(model: SyncGnn) -> Self {
        RoundSynchronizer {
            model,
            origin_mode: OriginMode::Corrected,
        }
    }

    /// Applies the current round's layer to the accumulated sum and emits the
    /// safe announcement. Final-round safes are suppressed: no neighbor can
    /// act on them (there is no round L+1 to open).
    fn update(&self, st: &mut RoundState, emissions: &mut Vec<Emission>) {
        let layer_idx = self.model.depth() - st.layers_left;
        let pre = std::mem::replace(&mut st.s, Vec::new());
        st.s = self.model.layers[layer_idx].apply(&pre);
        st.layers_left -= 1;
        if st.layers_left > 0 {
            emissions.push(Emission::new(pre, ProtocolBits::SAFE));
        }
    }
}

impl NodeProgram for RoundSynchronizer {
    type State = RoundState;

    fn payload_width(&self) -> usize {
        self.model.dim
    }

    fn init_state(&mut self, g: &Graph, v: NodeId) -> RoundState {
        RoundState {
            s: g.features(v).to_vec(),
            buffer: vec![0.0; self.model.dim],
            buffered: 0,
            pulses_awaited: 0,
            safes_awaited: 0,
            layers_left: self.model.depth(),
        }
    }

    fn on_message(&mut self, g: &Graph, v: NodeId, state: &RoundState, message: &Message) -> Result<Step<RoundState>> {
        let mut st = state.clone();
        if st.layers_left == 0 {
            return Ok(Step::quiet(st));
        }
        let degree = g.degree(v);
        let mut emissions = Vec::new();
        let bit = bit_of(message)?;

        match bit {
            SyncBit::Origin => {
                let pristine = st.pulses_awaited == 0
                    && st.safes_awaited == 0
                    && st.buffered == 0
                    && st.layers_left == self.model.depth();
                if !pristine {
                    return Err(AmpError::protocol("origin delivered to a non-pristine node".to_string()));
                }
                // Round 1 opens in the closure loop below.
            }
            SyncBit::Pulse => {
                if st.pulses_awaited > 0 {
                    for (s, m) in st.s.iter_mut().zip(&message.payload) {
                        *s += m;
                    }
                    st.pulses_awaited -= 1;
                    if st.pulses_awaited == 0 {
                        self.update(&mut st, &mut emissions);
                    }
                } else {
                    if st.buffered == degree {
                        return Err(AmpError::protocol("more early pulses than neighbors".to_string()));
                    }
                    for (b, m) in st.buffer.iter_mut().zip(&message.payload) {
                        *b += m;
                    }
                    st.buffered += 1;
                }
            }
            SyncBit::Safe => {
                if st.safes_awaited == 0 {
                    return Err(AmpError::protocol("safe arrived with none awaited".to_string()));
                }
                st.safes_awaited -= 1;
            }
        }

        // Round closure: everything for the committed round has been consumed
        // and layers remain. Open the next round: announce it with a pulse
        // carrying the committed state, seed the accumulator from the
        // early-pulse buffer, and if that already completes the round (leaf
        // nodes, fully buffered rounds), update immediately.
        while st.pulses_awaited == 0 && st.safes_awaited == 0 && st.layers_left > 0 {
            emissions.push(Emission::new(st.s.clone(), ProtocolBits::PULSE));
            let keep_own = bit == SyncBit::Origin && self.origin_mode == OriginMode::Verbatim;
            let mut next = std::mem::replace(&mut st.buffer, vec![0.0; self.model.dim]);
            if keep_own {
                for (x, own) in next.iter_mut().zip(&st.s) {
                    *x += own;
                }
            }
            st.s = next;
            st.pulses_awaited = degree - st.buffered;
            st.buffered = 0;
            st.safes_awaited = degree;
            if st.pulses_awaited == 0 {
                self.update(&mut st, &mut emissions);
            }
        }

        if st.s.iter().any(|x| !x.is_finite()) {
            return Err(AmpError::NumericFailure {
                step: 0,
                message: format!("non-finite synchronizer state at node {v}"),
            });
        }
        Ok(Step {
            state: st,
            emissions,
            halted: false,
        })
    }
}

/// Runs the corrected synchronizer from `start` until quiescence and returns
/// the per-node states, which equal the synchronous model's output after all
/// layers. Unreachable nodes (disconnected from `start`) keep their inputs;
/// callers wanting full coverage must pass a connected graph.
pub fn simulate(
    g: &Graph,
    model: &SyncGnn,
    start: NodeId,
    delay: DelayModel,
    origin_mode: OriginMode,
) -> Result<Vec<Vec<f64>>> {
    let cap = 20 * model.depth().max(1) as u64 * g.edge_count().max(1) as u64 + 50;
    let mut program = RoundSynchronizer {
        model: model.clone(),
        origin_mode,
    };
    let cfg = RunConfig::new(start, Some(cap), delay);
    let out = engine::run(g, &mut program, &cfg)?;
    if out.halt_reason != HaltReason::QueueEmpty {
        return Err(AmpError::ProtocolFailure(format!(
            "synchronizer not quiescent after {} deliveries",
            out.deliveries
        )));
    }
    Ok(out.states.into_iter().map(|st| st.s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::random_connected_graph;
    use crate::graph::Graph;
    use crate::sync_gnn::{forward, LayerWeights, SyncGnn};

    fn max_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn transition_origin_row() {
        let st = SyncState {
            s: vec![1.5],
            w: 0,
            u: 0,
            l: 4,
        };
        let msg = SyncMessage {
            payload: vec![0.0],
            bit: SyncBit::Origin,
        };
        let (next, out) = sync_transition(&st, &msg, 3, &LayerWeights::identity(1)).unwrap();
        assert_eq!((next.w, next.u, next.l), (2, 3, 4));
        assert_eq!(next.s, vec![1.5]);
        let out = out.unwrap();
        assert_eq!(out.bit, SyncBit::Pulse);
        assert_eq!(out.payload, vec![1.5]);
    }

    #[test]
    fn transition_exhausted_layers_is_noop() {
        let st = SyncState {
            s: vec![2.0],
            w: 3,
            u: 1,
            l: 0,
        };
        for bit in [SyncBit::Pulse, SyncBit::Safe, SyncBit::Origin] {
            let msg = SyncMessage {
                payload: vec![9.0],
                bit,
            };
            let (next, out) = sync_transition(&st, &msg, 2, &LayerWeights::identity(1)).unwrap();
            assert_eq!(next, st);
            assert!(out.is_none());
        }
    }

    #[test]
    fn transition_final_pulse_applies_layer() {
        let st = SyncState {
            s: vec![2.0],
            w: 0,
            u: 2,
            l: 1,
        };
        let msg = SyncMessage {
            payload: vec![3.0],
            bit: SyncBit::Pulse,
        };
        let (next, out) = sync_transition(&st, &msg, 3, &LayerWeights::identity(1)).unwrap();
        assert_eq!(next.s, vec![5.0]);
        assert_eq!((next.w, next.u, next.l), (0, 1, 0));
        assert_eq!(out.unwrap().bit, SyncBit::Safe);
    }

    #[test]
    fn transition_round_start_row() {
        let st = SyncState {
            s: vec![7.0],
            w: 0,
            u: 0,
            l: 2,
        };
        let msg = SyncMessage {
            payload: vec![4.0],
            bit: SyncBit::Pulse,
        };
        let (next, out) = sync_transition(&st, &msg, 3, &LayerWeights::identity(1)).unwrap();
        assert_eq!(next.s, vec![4.0]);
        assert_eq!((next.w, next.u), (1, 3));
        assert_eq!(out.unwrap().payload, vec![7.0]);
    }

    #[test]
    fn zero_layers_returns_features() {
        let g = Graph::from_edges(2, &[(0, 1)], vec![vec![0.3], vec![-0.7]]).unwrap();
        let model = SyncGnn::new(vec![]).unwrap();
        let states = simulate(&g, &model, 0, DelayModel::Constant(1.0), OriginMode::Corrected).unwrap();
        assert_eq!(states, vec![vec![0.3], vec![-0.7]]);
    }

    #[test]
    fn path_single_layer_matches_hand_result() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], vec![vec![0.4], vec![0.9], vec![0.2]]).unwrap();
        let model = SyncGnn::new(vec![LayerWeights::identity(1)]).unwrap();
        let states = simulate(&g, &model, 0, DelayModel::Constant(1.0), OriginMode::Corrected).unwrap();
        // [x_b, x_a + x_c, x_b]
        assert_eq!(states, vec![vec![0.9], vec![0.6000000000000001], vec![0.9]]);
    }

    #[test]
    fn verbatim_origin_keeps_own_features_in_round_one() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], vec![vec![0.4], vec![0.9], vec![0.2]]).unwrap();
        let model = SyncGnn::new(vec![LayerWeights::identity(1)]).unwrap();

        let corrected = simulate(&g, &model, 0, DelayModel::Constant(1.0), OriginMode::Corrected).unwrap();
        assert!((corrected[0][0] - 0.9).abs() < 1e-12);

        let verbatim = simulate(&g, &model, 0, DelayModel::Constant(1.0), OriginMode::Verbatim).unwrap();
        assert!((verbatim[0][0] - (0.4 + 0.9)).abs() < 1e-12);

        // The literal one-row-per-step program agrees with the corrected
        // program's verbatim origin mode on a single layer.
        let mut literal = VerbatimSynchronizer { model: model.clone() };
        let out = engine::run(&g, &mut literal, &RunConfig::new(0, Some(1000), DelayModel::Constant(1.0))).unwrap();
        assert_eq!(out.halt_reason, HaltReason::QueueEmpty);
        let states: Vec<Vec<f64>> = out.states.into_iter().map(|s| s.s).collect();
        assert!(max_deviation(&states, &verbatim) < 1e-12);
    }

    #[test]
    fn matches_oracle_on_random_graphs_under_both_delay_models() {
        for i in 0..10u64 {
            let n = 4 + (i as usize % 9);
            let g = random_connected_graph(n, 2, 5, 100 + i).unwrap();
            let layers = 1 + (i as usize % 3);
            let model = SyncGnn::random(2, layers, 300 + i);
            let oracle = forward(&g, &model).unwrap();

            let constant = simulate(&g, &model, 0, DelayModel::Constant(1.0), OriginMode::Corrected).unwrap();
            assert!(
                max_deviation(&oracle, &constant) < 1e-9,
                "constant delays diverge on seed {i}"
            );

            let uniform = simulate(&g, &model, 0, DelayModel::uniform_unit(900 + i), OriginMode::Corrected).unwrap();
            assert!(
                max_deviation(&oracle, &uniform) < 1e-9,
                "uniform delays diverge on seed {i}"
            );
        }
    }

    #[test]
    fn delay_model_does_not_change_results() {
        let g = random_connected_graph(9, 3, 5, 77).unwrap();
        let model = SyncGnn::random(3, 3, 78);
        let a = simulate(&g, &model, 2, DelayModel::Constant(0.5), OriginMode::Corrected).unwrap();
        for seed in 0..5 {
            let b = simulate(&g, &model, 2, DelayModel::uniform_unit(seed), OriginMode::Corrected).unwrap();
            assert!(max_deviation(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn pulse_soundness_and_message_accounting() {
        // Every pulse a node emits carries the oracle state of its completed
        // rounds, and per round a node consumes exactly `degree` pulses.
        let g = random_connected_graph(8, 2, 5, 55).unwrap();
        let layers = 3;
        let model = SyncGnn::random(2, layers, 56);
        let mut program = RoundSynchronizer::new(model.clone());
        let cfg = RunConfig::new(0, Some(100_000), DelayModel::uniform_unit(57)).with_trace();
        let out = engine::run(&g, &mut program, &cfg).unwrap();
        assert_eq!(out.halt_reason, HaltReason::QueueEmpty);

        // Oracle states after 0..layers rounds.
        let mut per_round: Vec<Vec<Vec<f64>>> = Vec::new();
        for l in 0..=layers {
            let partial = SyncGnn::new(model.layers[..l].to_vec()).unwrap();
            per_round.push(forward(&g, &partial).unwrap());
        }

        let trace = out.trace.unwrap();
        let mut pulses_emitted = vec![0usize; g.n()];
        let mut pulses_consumed = vec![0usize; g.n()];
        let mut safes_consumed = vec![0usize; g.n()];
        for step in &trace.steps {
            if step.message.protocol_bits == ProtocolBits::PULSE {
                pulses_consumed[step.receiver] += 1;
            }
            if step.message.protocol_bits == ProtocolBits::SAFE {
                safes_consumed[step.receiver] += 1;
            }
            for e in &step.emitted_payload {
                if e.protocol_bits == ProtocolBits::PULSE {
                    let round = pulses_emitted[step.receiver];
                    pulses_emitted[step.receiver] += 1;
                    let expect = &per_round[round][step.receiver];
                    for (a, b) in e.payload.iter().zip(expect) {
                        assert!((a - b).abs() < 1e-9, "pulse payload diverges from oracle round {round}");
                    }
                }
            }
        }
        for v in 0..g.n() {
            assert_eq!(pulses_emitted[v], layers);
            assert_eq!(pulses_consumed[v], g.degree(v) * layers);
            assert_eq!(safes_consumed[v], g.degree(v) * (layers - 1));
        }
    }

    #[test]
    fn leaf_nodes_simulate_correctly() {
        // Two-node path: both ends have degree 1.
        let g = Graph::from_edges(2, &[(0, 1)], vec![vec![0.8], vec![-0.3]]).unwrap();
        let model = SyncGnn::random(1, 3, 5);
        let oracle = forward(&g, &model).unwrap();
        for delay in [DelayModel::Constant(1.0), DelayModel::uniform_unit(1), DelayModel::uniform_unit(2)] {
            let states = simulate(&g, &model, 0, delay, OriginMode::Corrected).unwrap();
            assert!(max_deviation(&oracle, &states) < 1e-9);
        }
    }

    #[test]
    fn star_center_and_leaves_agree_with_oracle() {
        let g = crate::generate::star_graph(4)
            .unwrap()
            .with_features((0..5).map(|v| vec![0.1 * v as f64 + 0.1]).collect())
            .unwrap();
        let model = SyncGnn::random(1, 2, 9);
        let oracle = forward(&g, &model).unwrap();
        let states = simulate(&g, &model, 3, DelayModel::uniform_unit(10), OriginMode::Corrected).unwrap();
        assert!(max_deviation(&oracle, &states) < 1e-9);
    }
}

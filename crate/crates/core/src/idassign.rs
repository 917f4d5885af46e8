//! Identifier assignment under random message delays.
//!
//! A star's center hands out candidate IDs; outer nodes race to claim them.
//! Competition is resolved first-come-first-served: an outer node that sees a
//! rival's claim before its own offer copy surrenders the attempt, and the
//! center restarts an attempt whenever two claims collide. Random delays make
//! every attempt succeed with positive probability, so assignment terminates
//! with probability 1.
//!
//! Center bookkeeping uses a lazy convention: `replies_awaited` and
//! `unassigned` store their true counts minus one, so the final reply of an
//! attempt is the message that fires the resolution row, and the final
//! assignment is folded into the confirm broadcast.
//!
//! The general-graph procedure iterates star assignments over induced
//! neighborhoods: each finished node becomes a center in ID order, offers
//! start above the global maximum handed out so far, and already-identified
//! neighbors sit out. Ranks are compressed to `0..n-1` afterward.

use crate::engine::{self, DelayModel, Emission, HaltReason, Message, NodeProgram, ProtocolBits, RunConfig, Step};
use crate::error::{AmpError, Result};
use crate::generate::star_graph;
use crate::graph::{Graph, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Assigning,
    Having,
    Taking,
    Yielding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdMessageKind {
    Offer,
    Confirm,
    Claim,
    Surrender,
    Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMessage {
    pub cid: usize,
    pub attempt: i64,
    pub kind: IdMessageKind,
}

/// Node state shared by center and outer transitions. `try_attempt` starts at
/// -1 for outer nodes so the first offer (attempt 0) reads as fresh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdNodeState {
    pub try_attempt: i64,
    pub id: usize,
    /// Claims seen by the center in the current attempt.
    pub claims_seen: usize,
    /// Center: replies still outstanding for the current attempt, minus one.
    pub replies_awaited: usize,
    /// Center: neighbors without an ID, minus one.
    pub unassigned: usize,
    pub role: Role,
}

impl IdNodeState {
    pub fn initial_outer() -> Self {
        IdNodeState {
            try_attempt: -1,
            id: 0,
            claims_seen: 0,
            replies_awaited: 0,
            unassigned: 0,
            role: Role::Yielding,
        }
    }

    pub fn initial_center() -> Self {
        IdNodeState {
            try_attempt: 0,
            ..Self::initial_outer()
        }
    }
}

/// Center transition. `first_cid` is the candidate ID of the very first
/// offer; iterated general-graph assignment passes the next free ID here.
///
/// Rows, evaluated top-down:
/// 1. origin: start assigning, offer `first_cid` at attempt 0.
/// 2. having: terminal, ignore.
/// 3. stale attempt: drop.
/// 4. everyone assigned (`unassigned = 0`): broadcast confirm, go having.
/// 5. second claim in one attempt: restart, re-offer the same candidate ID.
/// 6. final reply (`replies_awaited = 0`): sole claim seen means success
///    (offer the next ID); all surrendered means a failed attempt (re-offer).
/// 7. first claim: count it.
/// 8. surrender: count it.
pub fn center_transition(
    state: &IdNodeState,
    msg: &IdMessage,
    degree: usize,
    first_cid: usize,
) -> Result<(IdNodeState, Option<IdMessage>)> {
    let mut st = state.clone();

    if msg.kind == IdMessageKind::Origin {
        if state.role != Role::Yielding && state.role != Role::Assigning {
            return Err(AmpError::protocol("origin delivered to a finished center".to_string()));
        }
        st.role = Role::Assigning;
        st.try_attempt = 0;
        st.id = 0;
        st.claims_seen = 0;
        st.replies_awaited = degree - 1;
        st.unassigned = degree - 1;
        return Ok((
            st,
            Some(IdMessage {
                cid: first_cid,
                attempt: 0,
                kind: IdMessageKind::Offer,
            }),
        ));
    }
    if st.role == Role::Having {
        return Ok((st, None));
    }
    if st.role != Role::Assigning {
        return Err(AmpError::protocol(format!("center transition in role {:?}", st.role)));
    }
    match msg.kind {
        IdMessageKind::Claim | IdMessageKind::Surrender => {}
        other => {
            return Err(AmpError::protocol(format!("center received {other:?}")));
        }
    }

    if msg.attempt != st.try_attempt {
        return Ok((st, None));
    }

    if st.unassigned == 0 {
        // Terminal; try_attempt is kept so runs can report attempt counts.
        st.role = Role::Having;
        st.claims_seen = 0;
        st.replies_awaited = 0;
        return Ok((
            st,
            Some(IdMessage {
                cid: 0,
                attempt: 0,
                kind: IdMessageKind::Confirm,
            }),
        ));
    }

    if msg.kind == IdMessageKind::Claim && st.claims_seen >= 1 {
        st.try_attempt += 1;
        st.claims_seen = 0;
        st.replies_awaited = st.unassigned;
        let reoffer = IdMessage {
            cid: msg.cid,
            attempt: st.try_attempt,
            kind: IdMessageKind::Offer,
        };
        return Ok((st, Some(reoffer)));
    }

    if st.replies_awaited == 0 {
        let succeeded = msg.kind == IdMessageKind::Claim || st.claims_seen == 1;
        st.try_attempt += 1;
        st.claims_seen = 0;
        if succeeded {
            st.unassigned -= 1;
            st.replies_awaited = st.unassigned;
            let next_offer = IdMessage {
                cid: msg.cid + 1,
                attempt: st.try_attempt,
                kind: IdMessageKind::Offer,
            };
            return Ok((st, Some(next_offer)));
        }
        st.replies_awaited = st.unassigned;
        let reoffer = IdMessage {
            cid: msg.cid,
            attempt: st.try_attempt,
            kind: IdMessageKind::Offer,
        };
        return Ok((st, Some(reoffer)));
    }

    match msg.kind {
        IdMessageKind::Claim => {
            st.claims_seen += 1;
            st.replies_awaited -= 1;
            Ok((st, None))
        }
        IdMessageKind::Surrender => {
            st.replies_awaited -= 1;
            Ok((st, None))
        }
        _ => unreachable!(),
    }
}

/// Outer transition.
///
/// Rows, evaluated top-down:
/// 1. having: terminal, ignore.
/// 2. taking + confirm: the claim stood, keep the ID.
/// 3. taking + fresher attempt: a different candidate ID means the center
///    moved past ours (implicit confirmation); the same candidate ID means
///    our claim collided, so yield and surrender.
/// 4. yielding + fresh offer: claim it.
/// 5. yielding + fresh rival claim or surrender: acknowledge the rival and
///    surrender this attempt (our own offer copy will arrive stale).
/// 6. anything else (stale or same-attempt rival traffic): ignore.
pub fn outer_transition(state: &IdNodeState, msg: &IdMessage) -> Result<(IdNodeState, Option<IdMessage>)> {
    let mut st = state.clone();
    if msg.kind == IdMessageKind::Origin {
        return Err(AmpError::protocol("origin delivered to an outer node".to_string()));
    }
    match st.role {
        Role::Assigning => Err(AmpError::protocol("outer transition in role Assigning".to_string())),
        Role::Having => Ok((st, None)),
        Role::Taking => {
            if msg.kind == IdMessageKind::Confirm {
                st.role = Role::Having;
                st.try_attempt = 0;
                return Ok((st, None));
            }
            if msg.attempt > st.try_attempt {
                if msg.cid != st.id {
                    st.role = Role::Having;
                    st.try_attempt = 0;
                    return Ok((st, None));
                }
                st.role = Role::Yielding;
                st.try_attempt = msg.attempt;
                st.id = 0;
                return Ok((
                    st,
                    Some(IdMessage {
                        cid: msg.cid,
                        attempt: msg.attempt,
                        kind: IdMessageKind::Surrender,
                    }),
                ));
            }
            Ok((st, None))
        }
        Role::Yielding => {
            if msg.kind == IdMessageKind::Confirm {
                return Err(AmpError::protocol("confirm reached an unassigned node".to_string()));
            }
            if msg.attempt > st.try_attempt {
                match msg.kind {
                    IdMessageKind::Offer => {
                        st.role = Role::Taking;
                        st.try_attempt = msg.attempt;
                        st.id = msg.cid;
                        return Ok((
                            st,
                            Some(IdMessage {
                                cid: msg.cid,
                                attempt: msg.attempt,
                                kind: IdMessageKind::Claim,
                            }),
                        ));
                    }
                    IdMessageKind::Claim | IdMessageKind::Surrender => {
                        st.try_attempt = msg.attempt;
                        return Ok((
                            st,
                            Some(IdMessage {
                                cid: msg.cid,
                                attempt: msg.attempt,
                                kind: IdMessageKind::Surrender,
                            }),
                        ));
                    }
                    _ => unreachable!(),
                }
            }
            Ok((st, None))
        }
    }
}

fn kind_bits(kind: IdMessageKind) -> ProtocolBits {
    match kind {
        IdMessageKind::Offer => ProtocolBits::OFFER,
        IdMessageKind::Confirm => ProtocolBits::CONFIRM,
        IdMessageKind::Claim => ProtocolBits::CLAIM,
        IdMessageKind::Surrender => ProtocolBits::SURRENDER,
        IdMessageKind::Origin => ProtocolBits::ORIGIN,
    }
}

fn bits_kind(bits: ProtocolBits) -> Result<IdMessageKind> {
    if bits.count() != 1 {
        return Err(AmpError::protocol("id messages carry exactly one type bit".to_string()));
    }
    for (kind, bit) in [
        (IdMessageKind::Offer, ProtocolBits::OFFER),
        (IdMessageKind::Confirm, ProtocolBits::CONFIRM),
        (IdMessageKind::Claim, ProtocolBits::CLAIM),
        (IdMessageKind::Surrender, ProtocolBits::SURRENDER),
        (IdMessageKind::Origin, ProtocolBits::ORIGIN),
    ] {
        if bits.contains(bit) {
            return Ok(kind);
        }
    }
    Err(AmpError::protocol("unknown id message bit".to_string()))
}

/// Engine program: node `center` runs the center transition, everyone else
/// the outer transition. Payloads encode `[cid, attempt]`.
#[derive(Clone)]
pub struct IdProgram {
    pub center: NodeId,
    pub first_cid: usize,
}

impl IdProgram {
    pub fn star() -> Self {
        IdProgram {
            center: 0,
            first_cid: 1,
        }
    }
}

impl NodeProgram for IdProgram {
    type State = IdNodeState;

    fn payload_width(&self) -> usize {
        2
    }

    fn init_state(&mut self, _g: &Graph, v: NodeId) -> IdNodeState {
        if v == self.center {
            IdNodeState::initial_center()
        } else {
            IdNodeState::initial_outer()
        }
    }

    fn on_message(&mut self, g: &Graph, v: NodeId, state: &IdNodeState, message: &Message) -> Result<Step<IdNodeState>> {
        let msg = IdMessage {
            cid: message.payload[0] as usize,
            attempt: message.payload[1] as i64,
            kind: bits_kind(message.protocol_bits)?,
        };
        let (next, emitted) = if v == self.center {
            center_transition(state, &msg, g.degree(v), self.first_cid)?
        } else {
            outer_transition(state, &msg)?
        };
        let emissions = emitted
            .map(|m| {
                vec![Emission::new(
                    vec![m.cid as f64, m.attempt as f64],
                    kind_bits(m.kind),
                )]
            })
            .unwrap_or_default();
        Ok(Step {
            state: next,
            emissions,
            halted: false,
        })
    }
}

/// Result of one star assignment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarAssignment {
    /// Per-node IDs, center first. A bijection onto `first_cid-1 .. first_cid+k-1`
    /// shifted so the center keeps its own ID (0 in plain star mode).
    pub ids: Vec<usize>,
    pub deliveries: u64,
    pub virtual_time: f64,
    /// Number of offer attempts the center went through.
    pub attempts: usize,
}

const STAR_DELIVERY_CAP: u64 = 10_000_000;

fn run_star_protocol(g: &Graph, center: NodeId, first_cid: usize, seed: u64) -> Result<StarAssignment> {
    let mut program = IdProgram { center, first_cid };
    let cfg = RunConfig::new(center, Some(STAR_DELIVERY_CAP), DelayModel::uniform_unit(seed));
    let out = engine::run(g, &mut program, &cfg)?;
    if out.halt_reason != HaltReason::QueueEmpty {
        return Err(AmpError::ProtocolFailure(format!(
            "id assignment not quiescent after {} deliveries",
            out.deliveries
        )));
    }
    let mut ids = Vec::with_capacity(g.n());
    for (v, st) in out.states.iter().enumerate() {
        if st.role != Role::Having {
            return Err(AmpError::ProtocolFailure(format!(
                "node {v} finished in role {:?}",
                st.role
            )));
        }
        ids.push(st.id);
    }
    let attempts = out.states[center].try_attempt as usize + 1;
    Ok(StarAssignment {
        ids,
        deliveries: out.deliveries,
        virtual_time: out.elapsed,
        attempts,
    })
}

/// Runs the protocol on a star with `k` outer nodes under uniform [0, 1]
/// delays. The returned IDs are a bijection onto `0..=k` with the center at 0.
pub fn assign_ids_star(k: usize, seed: u64) -> Result<StarAssignment> {
    let g = star_graph(k)?;
    let result = run_star_protocol(&g, 0, 1, seed)?;
    let mut seen = vec![false; k + 1];
    for &id in &result.ids {
        if id > k || seen[id] {
            return Err(AmpError::ProtocolFailure(format!("ids {:?} are not a bijection", result.ids)));
        }
        seen[id] = true;
    }
    Ok(result)
}

/// Iterated star assignment over a connected graph; returns a bijection onto
/// `0..n-1`.
pub fn assign_ids_general(g: &Graph, seed: u64) -> Result<Vec<usize>> {
    if !crate::graph::is_connected(g) {
        return Err(AmpError::invalid("general id assignment requires a connected graph".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: Vec<Option<usize>> = vec![None; g.n()];
    assigned[0] = Some(0);
    let mut next_free: usize = 1;
    let mut processed = vec![false; g.n()];

    loop {
        // The unprocessed node with the smallest ID becomes the next center.
        let Some(center) = (0..g.n())
            .filter(|&v| assigned[v].is_some() && !processed[v])
            .min_by_key(|&v| assigned[v].unwrap())
        else {
            break;
        };
        processed[center] = true;
        let outers: Vec<NodeId> = g.neighbors(center).iter().copied().filter(|&u| assigned[u].is_none()).collect();
        if outers.is_empty() {
            continue;
        }
        // Induced star: the center plus its unidentified neighbors, with the
        // outer nodes pairwise connected so claims reach rivals directly (the
        // center could equivalently relay them).
        let star = star_graph(outers.len())?;
        let result = run_star_protocol(&star, 0, next_free, rng.gen())?;
        for (i, &u) in outers.iter().enumerate() {
            assigned[u] = Some(result.ids[i + 1]);
        }
        next_free += outers.len();
    }

    let mut ids: Vec<usize> = assigned
        .into_iter()
        .map(|id| id.ok_or_else(|| AmpError::ProtocolFailure("unidentified node after assignment".to_string())))
        .collect::<Result<_>>()?;

    // Rank-compress to 0..n-1.
    let mut order: BTreeMap<usize, usize> = BTreeMap::new();
    for &id in &ids {
        order.insert(id, 0);
    }
    for (rank, (_, slot)) in order.iter_mut().enumerate() {
        *slot = rank;
    }
    for id in &mut ids {
        *id = order[id];
    }
    Ok(ids)
}

/// CLI-facing Monte Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdAssignReport {
    pub k: usize,
    pub trials: usize,
    pub uniqueness_failures: usize,
    pub mean_deliveries: f64,
    pub mean_virtual_time: f64,
    pub mean_attempts: f64,
    pub surrender_prob_estimate: f64,
}

/// Runs `trials` star assignments and aggregates the checks.
pub fn monte_carlo_star(k: usize, trials: usize, seed: u64) -> Result<IdAssignReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let mut deliveries = 0f64;
    let mut vtime = 0f64;
    let mut attempts = 0f64;
    for _ in 0..trials {
        match assign_ids_star(k, rng.gen()) {
            Ok(res) => {
                deliveries += res.deliveries as f64;
                vtime += res.virtual_time;
                attempts += res.attempts as f64;
            }
            Err(AmpError::ProtocolFailure(_)) => failures += 1,
            Err(other) => return Err(other),
        }
    }
    let ok = (trials - failures).max(1) as f64;
    Ok(IdAssignReport {
        k,
        trials,
        uniqueness_failures: failures,
        mean_deliveries: deliveries / ok,
        mean_virtual_time: vtime / ok,
        mean_attempts: attempts / ok,
        surrender_prob_estimate: surrender_probability_estimate(100_000, seed ^ 0xabcdef),
    })
}

/// Estimates the pairwise surrender probability: with i.i.d. uniform [0, 1]
/// delays, the chance that the offer to a rival plus the rival's claim beat
/// the direct offer, i.e. P(o_m + c_mn < o_n) = 1/6.
pub fn surrender_probability_estimate(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let offer_rival: f64 = rng.gen();
        let claim_relay: f64 = rng.gen();
        let offer_direct: f64 = rng.gen();
        if offer_rival + claim_relay < offer_direct {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_origin_row() {
        let st = IdNodeState::initial_center();
        let msg = IdMessage {
            cid: 0,
            attempt: 0,
            kind: IdMessageKind::Origin,
        };
        let (next, out) = center_transition(&st, &msg, 4, 1).unwrap();
        assert_eq!(next.role, Role::Assigning);
        assert_eq!((next.try_attempt, next.id, next.claims_seen), (0, 0, 0));
        assert_eq!((next.replies_awaited, next.unassigned), (3, 3));
        assert_eq!(
            out.unwrap(),
            IdMessage {
                cid: 1,
                attempt: 0,
                kind: IdMessageKind::Offer
            }
        );
    }

    #[test]
    fn center_drops_stale_attempts() {
        let st = IdNodeState {
            try_attempt: 2,
            role: Role::Assigning,
            unassigned: 1,
            replies_awaited: 1,
            ..IdNodeState::initial_center()
        };
        let msg = IdMessage {
            cid: 1,
            attempt: 1,
            kind: IdMessageKind::Claim,
        };
        let (next, out) = center_transition(&st, &msg, 3, 1).unwrap();
        assert_eq!(next, st);
        assert!(out.is_none());
    }

    #[test]
    fn center_confirms_when_everyone_assigned() {
        let st = IdNodeState {
            try_attempt: 5,
            role: Role::Assigning,
            unassigned: 0,
            replies_awaited: 0,
            ..IdNodeState::initial_center()
        };
        let msg = IdMessage {
            cid: 4,
            attempt: 5,
            kind: IdMessageKind::Claim,
        };
        let (next, out) = center_transition(&st, &msg, 4, 1).unwrap();
        assert_eq!(next.role, Role::Having);
        assert_eq!(out.unwrap().kind, IdMessageKind::Confirm);
    }

    #[test]
    fn center_restarts_on_second_claim() {
        let st = IdNodeState {
            try_attempt: 0,
            role: Role::Assigning,
            claims_seen: 1,
            unassigned: 2,
            replies_awaited: 1,
            ..IdNodeState::initial_center()
        };
        let msg = IdMessage {
            cid: 1,
            attempt: 0,
            kind: IdMessageKind::Claim,
        };
        let (next, out) = center_transition(&st, &msg, 4, 1).unwrap();
        assert_eq!(next.try_attempt, 1);
        assert_eq!(next.claims_seen, 0);
        assert_eq!(next.replies_awaited, 2);
        assert_eq!(next.unassigned, 2);
        let out = out.unwrap();
        assert_eq!((out.cid, out.attempt, out.kind), (1, 1, IdMessageKind::Offer));
    }

    #[test]
    fn outer_claims_fresh_offer() {
        let st = IdNodeState::initial_outer();
        let msg = IdMessage {
            cid: 1,
            attempt: 0,
            kind: IdMessageKind::Offer,
        };
        let (next, out) = outer_transition(&st, &msg).unwrap();
        assert_eq!(next.role, Role::Taking);
        assert_eq!(next.id, 1);
        assert_eq!(
            out.unwrap(),
            IdMessage {
                cid: 1,
                attempt: 0,
                kind: IdMessageKind::Claim
            }
        );
    }

    #[test]
    fn outer_keeps_id_on_confirm() {
        let st = IdNodeState {
            role: Role::Taking,
            id: 1,
            try_attempt: 0,
            ..IdNodeState::initial_outer()
        };
        let msg = IdMessage {
            cid: 0,
            attempt: 0,
            kind: IdMessageKind::Confirm,
        };
        let (next, out) = outer_transition(&st, &msg).unwrap();
        assert_eq!((next.role, next.id), (Role::Having, 1));
        assert!(out.is_none());
    }

    #[test]
    fn outer_implicit_confirm_on_next_offer() {
        let st = IdNodeState {
            role: Role::Taking,
            id: 1,
            try_attempt: 0,
            ..IdNodeState::initial_outer()
        };
        let msg = IdMessage {
            cid: 2,
            attempt: 1,
            kind: IdMessageKind::Offer,
        };
        let (next, out) = outer_transition(&st, &msg).unwrap();
        assert_eq!((next.role, next.id), (Role::Having, 1));
        assert!(out.is_none());
    }

    #[test]
    fn outer_surrenders_on_same_cid_reoffer() {
        let st = IdNodeState {
            role: Role::Taking,
            id: 1,
            try_attempt: 0,
            ..IdNodeState::initial_outer()
        };
        let msg = IdMessage {
            cid: 1,
            attempt: 1,
            kind: IdMessageKind::Offer,
        };
        let (next, out) = outer_transition(&st, &msg).unwrap();
        assert_eq!(next.role, Role::Yielding);
        assert_eq!(next.try_attempt, 1);
        assert_eq!(out.unwrap().kind, IdMessageKind::Surrender);
    }

    #[test]
    fn outer_yields_to_rival_claim() {
        let st = IdNodeState::initial_outer();
        let msg = IdMessage {
            cid: 1,
            attempt: 0,
            kind: IdMessageKind::Claim,
        };
        let (next, out) = outer_transition(&st, &msg).unwrap();
        assert_eq!(next.role, Role::Yielding);
        assert_eq!(next.try_attempt, 0);
        assert_eq!(out.unwrap().kind, IdMessageKind::Surrender);
        // Its own offer copy now reads stale.
        let offer = IdMessage {
            cid: 1,
            attempt: 0,
            kind: IdMessageKind::Offer,
        };
        let (after, out2) = outer_transition(&next, &offer).unwrap();
        assert_eq!(after, next);
        assert!(out2.is_none());
    }

    #[test]
    fn single_outer_gets_id_one() {
        let res = assign_ids_star(1, 7).unwrap();
        assert_eq!(res.ids, vec![0, 1]);
        assert_eq!(res.attempts, 1);
        // origin + offer + claim + confirm
        assert_eq!(res.deliveries, 4);
    }

    #[test]
    fn star_assignments_are_bijections() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for k in 1..=4 {
            for _ in 0..50 {
                let res = assign_ids_star(k, rng.gen()).unwrap();
                let mut ids = res.ids.clone();
                ids.sort_unstable();
                assert_eq!(ids, (0..=k).collect::<Vec<_>>());
                assert_eq!(res.ids[0], 0);
            }
        }
    }

    #[test]
    fn star_run_is_deterministic_per_seed() {
        let a = assign_ids_star(4, 99).unwrap();
        let b = assign_ids_star(4, 99).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.deliveries, b.deliveries);
        assert_eq!(a.virtual_time, b.virtual_time);
    }

    #[test]
    fn quiescence_after_confirm() {
        let g = star_graph(3).unwrap();
        let mut program = IdProgram::star();
        let cfg = RunConfig::new(0, Some(STAR_DELIVERY_CAP), DelayModel::uniform_unit(31)).with_trace();
        let out = engine::run(&g, &mut program, &cfg).unwrap();
        let trace = out.trace.unwrap();
        // The confirm broadcast is the protocol's final word: once its last
        // copy lands, only stale traffic remains and nothing changes state.
        let last_confirm = trace
            .steps
            .iter()
            .rposition(|s| s.message.protocol_bits == ProtocolBits::CONFIRM)
            .expect("confirm must be delivered");
        for step in &trace.steps[last_confirm + 1..] {
            assert_eq!(step.state_before, step.state_after);
            assert!(step.emitted_payload.is_empty());
        }
    }

    #[test]
    fn general_graphs_get_full_bijections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 4 + trial % 7;
            let g = crate::generate::generate_spanning_tree_graph(n, 600 + trial as u64).unwrap();
            let ids = assign_ids_general(&g, rng.gen()).unwrap();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>(), "trial {trial}: ids {ids:?}");
            assert_eq!(ids[0], 0);
        }
    }

    #[test]
    fn general_rejects_disconnected() {
        let g = Graph::from_edges_unit(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(assign_ids_general(&g, 1).is_err());
    }

    #[test]
    fn surrender_probability_close_to_analytic() {
        let p = surrender_probability_estimate(100_000, 12);
        assert!((p - 1.0 / 6.0).abs() < 0.01, "estimate {p}");
    }
}

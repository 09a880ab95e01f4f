//! TRAIL rounds on top of a formed DODAG: the convergecast attestation and the
//! single-path rank test.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{World, TAG_TRAIL_DOWN, TAG_TRAIL_SINGLE, TAG_TRAIL_UP};
use crate::adversary::{Role, TrailVariant};
use crate::bloom::{BloomFilter, FilterElement};
use crate::dodag::NodeId;
use crate::error::Result;
use crate::message::Message;
use crate::trail::{
    diagnose_attestation, hop_check, merge_arrays, FilterArray, SignedAttestation, TrailContext, TrailFailure,
    TrailReplyMsg, TrailTestMsg, TrailVerdict,
};

const NONCE_SALT: u64 = 0x6e6f_6e63_6573_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailMode {
    /// Each node tests its own path to the root.
    Single,
    /// One convergecast builds a filter array, the root signs it for everyone.
    Convergecast,
}

#[derive(Default, Debug)]
pub(crate) struct TrailState {
    round: u64,
    nonces: BTreeMap<NodeId, u64>,
    inbox: BTreeMap<NodeId, BTreeMap<NodeId, (Option<u64>, FilterArray)>>,
    saved: BTreeMap<NodeId, FilterArray>,
    sent_up: BTreeSet<NodeId>,
    relayed: BTreeSet<NodeId>,
    verdicts: BTreeMap<NodeId, TrailVerdict>,
    attestation: Option<SignedAttestation>,
}

impl World {
    /// Nonces of the last round, drawn for every node in id order.
    pub fn trail_nonces(&self) -> &BTreeMap<NodeId, u64> {
        &self.tr.nonces
    }

    /// Verdicts honest nodes reached in the last round.
    pub fn trail_verdicts(&self) -> &BTreeMap<NodeId, TrailVerdict> {
        &self.tr.verdicts
    }

    /// The array the root signed in the last convergecast.
    pub fn trail_attestation(&self) -> Option<&SignedAttestation> {
        self.tr.attestation.as_ref()
    }

    fn begin_round(&mut self) {
        let round = self.tr.round + 1;
        self.tr = TrailState { round, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ NONCE_SALT ^ round);
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for n in ids {
            let v: u64 = rng.gen();
            if n != self.root {
                self.tr.nonces.insert(n, v);
            }
        }
    }

    fn ranked_members(&self) -> Vec<(NodeId, u32)> {
        self.nodes
            .values()
            .filter(|s| s.id != self.root)
            .filter_map(|s| s.rank.map(|r| (s.id, r.0)))
            .collect()
    }

    pub fn run_trail(&mut self, mode: TrailMode) -> Result<()> {
        self.begin_round();
        let members = self.ranked_members();
        let r_max = members.iter().map(|m| m.1).max().unwrap_or(0) as u64;
        let slack = self.nodes.len() as u64;
        match mode {
            TrailMode::Convergecast => {
                for &(n, r) in &members {
                    if self.nodes[&n].children.is_empty() {
                        self.trail_send_up(n);
                    } else {
                        self.sim.timer(n, 2 * (r_max - (r as u64).min(r_max)) + 2, TAG_TRAIL_UP);
                    }
                    if !self.is_attacker(n) {
                        self.sim.timer(n, 2 * r_max + 4 + slack, TAG_TRAIL_DOWN);
                    }
                }
                let root = self.root;
                if self.nodes[&root].children.is_empty() {
                    self.trail_send_up(root);
                } else {
                    self.sim.timer(root, 2 * r_max + 2, TAG_TRAIL_UP);
                }
            }
            TrailMode::Single => {
                for &(n, _) in &members {
                    if !self.is_attacker(n) {
                        self.start_single(n);
                    }
                }
            }
        }
        self.drain()
    }

    /// Runs one single-path test from `initiator` and returns its verdict.
    pub fn single_path_validate(&mut self, initiator: NodeId) -> Result<Option<TrailVerdict>> {
        if self.tr.nonces.is_empty() {
            self.begin_round();
        }
        self.tr.verdicts.remove(&initiator);
        self.start_single(initiator);
        self.drain()?;
        Ok(self.tr.verdicts.get(&initiator).copied())
    }

    fn start_single(&mut self, n: NodeId) {
        let st = &self.nodes[&n];
        let (Some(p), Some(r)) = (st.preferred_parent, self.upward_rank(n)) else { return };
        let Some(&nonce) = self.tr.nonces.get(&n) else { return };
        let t = TrailTestMsg { initiator: n, nonce, scribed: None, sender_rank: r.0, path: vec![n] };
        let _ = self.sim.unicast(n, p, Message::TrailTest(t));
        self.sim.timer(n, 2 * self.nodes.len() as u64 + 4, TAG_TRAIL_SINGLE);
    }

    fn record(&mut self, me: NodeId, v: TrailVerdict) {
        let failures: Vec<TrailFailure> = match v {
            TrailVerdict::Failed(f) => vec![f],
            TrailVerdict::Verified { .. } => Vec::new(),
        };
        self.record_with(me, v, &failures);
    }

    fn record_with(&mut self, me: NodeId, v: TrailVerdict, failures: &[TrailFailure]) {
        if self.is_attacker(me) || self.tr.verdicts.contains_key(&me) {
            return;
        }
        self.tr.verdicts.insert(me, v);
        self.note(me, "trail-verdict", json!({"verdict": v, "failures": failures}));
    }

    fn violation(&mut self, me: NodeId, initiator: NodeId, own: u32, scribed: u32, sender: u32) {
        self.note(
            me,
            "trail-violation",
            json!({"initiator": initiator, "own": own, "scribed": scribed, "sender": sender}),
        );
    }

    pub(crate) fn on_trail_test(&mut self, me: NodeId, _from: NodeId, mut t: TrailTestMsg) {
        let Some(own) = self.nodes[&me].rank.map(|r| r.0) else { return };
        let scribed = *t.scribed.get_or_insert(t.sender_rank);
        if !self.is_attacker(me) && !hop_check(own, scribed, t.sender_rank) {
            self.violation(me, t.initiator, own, scribed, t.sender_rank);
            return;
        }
        t.path.push(me);
        if me == self.root {
            let version = self.root_version;
            let signature = self.sign(&TrailReplyMsg::signed_bytes(t.initiator, t.nonce, scribed, version));
            let mut route: Vec<NodeId> = t.path[..t.path.len() - 1].iter().rev().copied().collect();
            let next = route.remove(0);
            let r = TrailReplyMsg { initiator: t.initiator, nonce: t.nonce, scribed, version, signature, route };
            let _ = self.sim.unicast(me, next, Message::TrailReply(r));
            return;
        }
        let (Some(p), Some(r)) = (self.nodes[&me].preferred_parent, self.upward_rank(me)) else { return };
        t.sender_rank = r.0;
        let _ = self.sim.unicast(me, p, Message::TrailTest(t));
    }

    pub(crate) fn on_trail_reply(&mut self, me: NodeId, mut r: TrailReplyMsg) {
        let own = self.nodes[&me].rank.map_or(0, |x| x.0);
        if r.route.is_empty() {
            if me != r.initiator {
                return;
            }
            let v = if !r.verify(&self.vk) {
                TrailVerdict::Failed(TrailFailure::BadSignature)
            } else if r.version != self.nodes[&me].version.0 {
                TrailVerdict::Failed(TrailFailure::WrongVersion)
            } else if self.tr.nonces.get(&me) != Some(&r.nonce) {
                TrailVerdict::Failed(TrailFailure::NonceMissing)
            } else if r.scribed != own {
                TrailVerdict::Failed(TrailFailure::RankViolation { at: me })
            } else {
                TrailVerdict::Verified { rank: own, version: r.version }
            };
            self.record(me, v);
            return;
        }
        if !self.is_attacker(me) && r.scribed <= own {
            self.violation(me, r.initiator, own, r.scribed, r.scribed);
            return;
        }
        let next = r.route.remove(0);
        let _ = self.sim.unicast(me, next, Message::TrailReply(r));
    }

    pub(crate) fn on_trail_single_deadline(&mut self, me: NodeId) {
        if !self.tr.verdicts.contains_key(&me) {
            self.record(me, TrailVerdict::Failed(TrailFailure::Timeout));
        }
    }

    pub(crate) fn on_trail_up(&mut self, me: NodeId, from: NodeId, nonce: Option<u64>, array: FilterArray) {
        if self.tr.sent_up.contains(&me) {
            return;
        }
        self.tr.inbox.entry(me).or_default().insert(from, (nonce, array));
        let inbox = &self.tr.inbox[&me];
        if self.nodes[&me].children.iter().all(|c| inbox.contains_key(c)) {
            self.trail_send_up(me);
        }
    }

    pub(crate) fn on_trail_up_deadline(&mut self, me: NodeId) {
        self.trail_send_up(me);
    }

    /// Merges whatever has arrived and sends it on (or signs it, at the root).
    fn trail_send_up(&mut self, n: NodeId) {
        if !self.tr.sent_up.insert(n) {
            return;
        }
        let inbox = self.tr.inbox.remove(&n).unwrap_or_default();
        let roles = self.active_roles(n).to_vec();
        let lifted = roles.iter().find_map(|r| match r {
            Role::Colluder { child } if inbox.contains_key(child) => Some(*child),
            _ => None,
        });
        let empty = FilterArray::default();
        let refs: Vec<(NodeId, Option<u64>, &FilterArray)> = inbox
            .iter()
            .map(|(&c, (nonce, a))| (c, *nonce, if Some(c) == lifted { &empty } else { a }))
            .collect();
        let p = self.cfg.bloom;
        let mut b = merge_arrays(p, &refs);
        if let Some(c) = lifted {
            // the colluding child's subtree moves up one level
            lift_into(&mut b, &inbox[&c].1, 1);
        }
        let mut withhold = false;
        for role in &roles {
            let Role::Manipulator(v) = role else { continue };
            match v {
                TrailVariant::DropChildren => b = FilterArray::default(),
                TrailVariant::Misplace => b.elements.insert(0, FilterElement::single(BloomFilter::new(p))),
                TrailVariant::Rearrange => b.elements.reverse(),
                TrailVariant::WithholdOwn => withhold = true,
                TrailVariant::DeleteNonces => {
                    let idx = if b.len() >= 2 { 1 } else { 0 };
                    if let Some(s) = b.elements.get_mut(idx).and_then(|e| e.slices.first_mut()) {
                        s.clear();
                    }
                }
                TrailVariant::MergeOnBehalf => {
                    let helper = self.adv.attackers().find(|&a| a != n && self.adv.has(a, |r| *r == Role::Replayer));
                    let child = helper.and_then(|m2| {
                        inbox.keys().copied().find(|&c| self.topology().adjacent(c, m2))
                    });
                    if let Some(c) = child {
                        let a = inbox[&c].1.clone();
                        let tail = FilterArray { elements: a.elements.iter().skip(1).cloned().collect() };
                        lift_into(&mut b, &tail, 2);
                    }
                }
            }
        }
        if n == self.root {
            let att = SignedAttestation::sign(self.signer(), self.root_version, b);
            self.note(n, "trail-attest", json!({"slices": att.array.slice_counts(), "bits": att.array.slice_bits()}));
            self.tr.attestation = Some(att.clone());
            self.tr.relayed.insert(n);
            self.sim.multicast(n, Message::TrailDown(att));
            return;
        }
        let Some(parent) = self.nodes[&n].preferred_parent else { return };
        self.tr.saved.insert(n, b.clone());
        let nonce = if withhold { None } else { self.tr.nonces.get(&n).copied() };
        let _ = self.sim.unicast(n, parent, Message::TrailUp { nonce, array: b });
    }

    pub(crate) fn on_trail_down(&mut self, me: NodeId, _from: NodeId, att: SignedAttestation) {
        if !self.tr.relayed.insert(me) {
            return;
        }
        let st = &self.nodes[&me];
        if let (Some(rank), Some(&nonce), false) = (st.rank, self.tr.nonces.get(&me), self.is_attacker(me)) {
            let empty = FilterArray::default();
            let saved = self.tr.saved.get(&me).unwrap_or(&empty);
            let ctx = TrailContext { rank: rank.0, version: st.version.0, nonce, saved };
            let failures = diagnose_attestation(&ctx, &att, &self.vk);
            let v = match failures.first() {
                Some(f) => TrailVerdict::Failed(*f),
                None => TrailVerdict::Verified { rank: rank.0, version: st.version.0 },
            };
            self.record_with(me, v, &failures);
        }
        self.sim.multicast(me, Message::TrailDown(att));
    }

    pub(crate) fn on_trail_down_deadline(&mut self, me: NodeId) {
        if !self.tr.verdicts.contains_key(&me) {
            self.record(me, TrailVerdict::Failed(TrailFailure::Timeout));
        }
    }
}

/// Concatenates `src(t)` into `dst(t + offset - 1)`, growing `dst` as needed.
fn lift_into(dst: &mut FilterArray, src: &FilterArray, offset: usize) {
    for (i, e) in src.elements.iter().enumerate() {
        let at = i + offset - 1;
        while dst.elements.len() <= at {
            dst.elements.push(FilterElement::default());
        }
        dst.elements[at].concat(e);
    }
}

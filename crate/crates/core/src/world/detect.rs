//! Data-path validation, rank announcements, challenge-response, root adjudication
//! and legitimation flooding.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde_json::json;

use super::{World, TAG_ADJUDICATE, TAG_CHALLENGE, TAG_DIS};
use crate::dodag::{validate_datagram, Consistency, Datagram, Direction, Inconsistency, NodeId, Rank};
use crate::error::Result;
use crate::message::Message;
use crate::verapp::{
    adjudicate, answer_challenge, check_response, flood_step, Challenge, ChallengeOutcome, ChallengeResponse,
    LegitimationMsg, Notification, Verdict,
};

pub(crate) const DIS_TIMEOUT: u64 = 4;
pub(crate) const CHALLENGE_TIMEOUT: u64 = 6;
pub const ADJUDICATION_WINDOW: u64 = 32;

#[derive(Default, Debug)]
pub(crate) struct DetectState {
    buffered: BTreeMap<NodeId, Vec<(NodeId, Datagram)>>,
    announced: BTreeSet<NodeId>,
    repaired: BTreeMap<NodeId, NodeId>,
    /// suspect -> (challenger, challenge, resolved)
    challenges: BTreeMap<NodeId, (NodeId, Challenge, bool)>,
    root_notes: Vec<Notification>,
    notice_paths: BTreeMap<NodeId, Vec<NodeId>>,
    adjudication_armed: bool,
    flood_seen: BTreeSet<NodeId>,
}

impl World {
    /// Every ranked node sends one datagram toward the root.
    pub fn run_data_round(&mut self) -> Result<()> {
        let senders: Vec<NodeId> =
            self.nodes.values().filter(|s| s.id != self.root && s.rank.is_some()).map(|s| s.id).collect();
        for (tag, n) in senders.into_iter().enumerate() {
            self.originate(n, tag as u32);
        }
        self.drain()
    }

    fn originate(&mut self, n: NodeId, tag: u32) {
        let (Some(p), Some(r)) = (self.nodes[&n].preferred_parent, self.upward_rank(n)) else { return };
        let d = Datagram { src: n, dst: self.root, direction: Direction::Up, sender_rank: r, tag };
        let _ = self.sim.unicast(n, p, Message::Data(d));
    }

    fn forward_up(&mut self, me: NodeId, mut d: Datagram) {
        if me == self.root {
            return;
        }
        let (Some(p), Some(r)) = (self.nodes[&me].preferred_parent, self.upward_rank(me)) else { return };
        d.sender_rank = r;
        let _ = self.sim.unicast(me, p, Message::Data(d));
    }

    pub(crate) fn on_data(&mut self, me: NodeId, from: NodeId, d: Datagram) {
        if self.is_attacker(me) {
            self.forward_up(me, d);
            return;
        }
        let verdict = match validate_datagram(self.topology(), &self.nodes[&me], from, &d) {
            Ok(v) => v,
            Err(e) => {
                self.note(me, "error", json!({"error": e.to_string()}));
                return;
            }
        };
        match verdict {
            Consistency::Consistent => {
                let st = &self.nodes[&me];
                let own = st.rank.unwrap_or(Rank(u32::MAX));
                let suspicious = self.cfg.challenge_response
                    && d.direction == Direction::Up
                    && st.children.contains(&from)
                    && !st.announced_ranks.contains_key(&from)
                    && st.heard.get(&from).is_some_and(|r| *r <= own);
                if suspicious {
                    self.det.buffered.entry(me).or_default().push((from, d));
                    self.request_rank_announcement(me, from);
                    return;
                }
                self.forward_up(me, d);
            }
            Consistency::Inconsistent(reason) => {
                self.note(me, "inconsistent", json!({"from": from, "reason": format!("{reason:?}")}));
                if self.cfg.challenge_response
                    && reason == Inconsistency::ChildRankViolation
                    && self.det.repaired.get(&me) != Some(&from)
                {
                    self.det.repaired.insert(me, from);
                    self.start_local_repair(me);
                }
            }
        }
    }

    /// DIS to `target`; its neighbours record the answer.
    pub fn request_rank_announcement(&mut self, requester: NodeId, target: NodeId) {
        self.sim.multicast(requester, Message::Dis { target });
        self.sim.timer(requester, DIS_TIMEOUT, TAG_DIS | target.0);
    }

    pub(crate) fn on_dis(&mut self, me: NodeId, target: NodeId) {
        if me != target || self.det.announced.contains(&me) {
            return;
        }
        let Some((rank, _)) = self.advertised(me) else { return };
        self.det.announced.insert(me);
        let v = self.nodes[&me].version.0;
        self.sim.multicast(me, Message::Announce { version: v, rank: rank.0 });
    }

    pub(crate) fn on_announce(&mut self, me: NodeId, from: NodeId, version: u32, rank: u32) {
        let st = self.nodes.get_mut(&me).unwrap();
        if version != st.version.0 {
            return;
        }
        // irrevocable for the rest of the version
        st.announced_ranks.entry(from).or_insert(Rank(rank));
        let pending = self.det.buffered.remove(&me).unwrap_or_default();
        let (now, later): (Vec<_>, Vec<_>) = pending.into_iter().partition(|(f, _)| *f == from);
        if !later.is_empty() {
            self.det.buffered.insert(me, later);
        }
        for (f, d) in now {
            self.on_data(me, f, d);
        }
    }

    pub(crate) fn on_dis_timeout(&mut self, me: NodeId, target: NodeId) {
        if !self.nodes[&me].announced_ranks.contains_key(&target) {
            self.note(me, "no-response", json!({"target": target}));
        }
    }

    /// A child re-registered after the repair: challenge it.
    pub(crate) fn after_child_registration(&mut self, me: NodeId, child: NodeId) {
        if !self.cfg.challenge_response || self.det.repaired.get(&me) != Some(&child) {
            return;
        }
        let st = &self.nodes[&me];
        let own = st.rank.unwrap_or(Rank(0));
        if st.announced_ranks.get(&child).is_some_and(|a| *a <= own) && !self.det.challenges.contains_key(&child) {
            self.issue_challenge(me, child);
        }
    }

    pub fn issue_challenge(&mut self, challenger: NodeId, suspect: NodeId) {
        let c = Challenge { challenger, target: suspect, nonce: self.rng.gen() };
        self.det.challenges.insert(suspect, (challenger, c, false));
        self.note(challenger, "challenge", json!({"suspect": suspect}));
        let _ = self.sim.unicast(challenger, suspect, Message::Challenge(c));
        self.sim.timer(challenger, CHALLENGE_TIMEOUT, TAG_CHALLENGE | suspect.0);
    }

    pub(crate) fn on_challenge(&mut self, me: NodeId, from: NodeId, c: Challenge) {
        if c.target != me {
            return;
        }
        let Some((claimed, own_elem)) = self.advertised(me) else { return };
        let st = &self.nodes[&me];
        // a parent one level above the claimed rank
        let helper = st
            .heard
            .iter()
            .filter(|(n, r)| r.0 + 1 == claimed.0 && st.elements.contains_key(n))
            .map(|(&n, _)| n)
            .next();
        let suite = self.cfg.suite;
        let response = match helper {
            Some(p) => {
                let ct = answer_challenge(&suite, &st.elements[&p], &c);
                Some((ChallengeResponse { challenger: c.challenger, responder: me, nonce: c.nonce, ciphertext: ct }, Some(p)))
            }
            // a cornered liar answers with what it has
            None if self.is_attacker(me) => own_elem.map(|e| {
                let ct = answer_challenge(&suite, &e, &c);
                (ChallengeResponse { challenger: c.challenger, responder: me, nonce: c.nonce, ciphertext: ct }, None)
            }),
            None => None,
        };
        if let Some((r, vouch)) = response {
            let _ = self.sim.unicast(me, from, Message::Response(r));
            if let (Some(p), false) = (vouch, self.is_attacker(me)) {
                let _ = self.sim.unicast(me, p, Message::Vouch { challenge: c, response: r });
            }
        }
    }

    fn challenge_key(&self, challenger: NodeId) -> Option<crate::chains::ChainElement> {
        let st = &self.nodes[&challenger];
        st.preferred_parent.and_then(|p| st.elements.get(&p).copied())
    }

    pub(crate) fn on_response(&mut self, me: NodeId, from: NodeId, r: ChallengeResponse) {
        let Some(&(h, c, resolved)) = self.det.challenges.get(&from) else { return };
        if h != me || resolved {
            return;
        }
        let outcome = match self.challenge_key(me) {
            Some(k) => check_response(&self.cfg.suite, &k, &c, Some(&r)),
            None => ChallengeOutcome::Fail,
        };
        self.resolve_challenge(me, from, outcome);
    }

    pub(crate) fn on_challenge_timeout(&mut self, me: NodeId, suspect: NodeId) {
        if let Some(&(h, _, false)) = self.det.challenges.get(&suspect) {
            if h == me {
                self.resolve_challenge(me, suspect, ChallengeOutcome::Fail);
            }
        }
    }

    fn resolve_challenge(&mut self, me: NodeId, suspect: NodeId, outcome: ChallengeOutcome) {
        self.det.challenges.get_mut(&suspect).unwrap().2 = true;
        self.note(me, "challenge-result", json!({"suspect": suspect, "outcome": format!("{outcome:?}")}));
        if outcome == ChallengeOutcome::Fail {
            let own = self.nodes[&me].rank.map_or(0, |r| r.0);
            let claimed = self.nodes[&me].announced_ranks.get(&suspect).map_or(own, |r| r.0);
            let note = Notification::Failure { challenger: me, suspect, challenger_rank: own, suspect_rank: claimed };
            self.send_notice(me, note, vec![me]);
        }
    }

    pub(crate) fn on_vouch(&mut self, me: NodeId, from: NodeId, c: Challenge, r: ChallengeResponse) {
        let Some(own) = self.nodes[&me].element else { return };
        if self.is_attacker(me) {
            return;
        }
        if check_response(&self.cfg.suite, &own, &c, Some(&r)) == ChallengeOutcome::Pass {
            let note = Notification::Validation { validator: me, suspect: from, challenger: c.challenger };
            self.send_notice(me, note, vec![me]);
        }
    }

    fn send_notice(&mut self, me: NodeId, note: Notification, path: Vec<NodeId>) {
        if me == self.root {
            self.on_notice(me, note, path);
            return;
        }
        if let Some(p) = self.nodes[&me].preferred_parent {
            let _ = self.sim.unicast(me, p, Message::Notice { note, path });
        }
    }

    pub(crate) fn on_notice(&mut self, me: NodeId, note: Notification, mut path: Vec<NodeId>) {
        if path.last() != Some(&me) {
            path.push(me);
        }
        if me != self.root {
            if self.is_attacker(me) {
                return;
            }
            self.send_notice(me, note, path);
            return;
        }
        if let Notification::Failure { challenger, .. } = note {
            self.det.notice_paths.entry(challenger).or_insert(path);
        }
        self.note(me, "notice", json!({"note": note}));
        self.det.root_notes.push(note);
        if !self.det.adjudication_armed {
            self.det.adjudication_armed = true;
            self.sim.timer(me, ADJUDICATION_WINDOW, TAG_ADJUDICATE);
        }
    }

    pub(crate) fn on_adjudicate(&mut self) {
        let verdict = adjudicate(&self.det.root_notes);
        let root = self.root;
        self.note(root, "verdict", json!({"verdict": verdict}));
        let Verdict::Malicious { node, challenger_rank, suspect_rank, accused } = verdict else { return };
        let msg = LegitimationMsg::create(self.signer(), challenger_rank, suspect_rank, node);
        // route down the notice path to the challenger's parent, which starts the flood
        let challenger = self.det.root_notes.iter().find_map(|n| match n {
            Notification::Failure { challenger, suspect, .. } if *suspect == accused => Some(*challenger),
            _ => None,
        });
        let path = challenger.and_then(|c| self.det.notice_paths.get(&c).cloned()).unwrap_or_default();
        let mut route: Vec<NodeId> = path.iter().skip(1).filter(|&&n| n != root).copied().collect();
        route.reverse();
        if route.is_empty() {
            self.flood_receive(root, msg);
        } else {
            let first = route.remove(0);
            let _ = self.sim.unicast(root, first, Message::Legitimation { msg, route });
        }
    }

    pub(crate) fn on_legitimation(&mut self, me: NodeId, msg: LegitimationMsg, mut route: Vec<NodeId>) {
        if route.is_empty() {
            self.flood_receive(me, msg);
        } else if !self.is_attacker(me) {
            let next = route.remove(0);
            let _ = self.sim.unicast(me, next, Message::Legitimation { msg, route });
        }
    }

    fn flood_receive(&mut self, me: NodeId, msg: LegitimationMsg) {
        if !self.det.flood_seen.insert(me) {
            return;
        }
        let step = flood_step(self.topology(), me, &msg, &self.vk);
        if !step.accept {
            self.note(me, "legitimation-invalid", json!({}));
            return;
        }
        if me == msg.suspect {
            return;
        }
        self.isolate(me, msg.suspect);
        if let Some(hl) = step.forward_hop_limit {
            let fwd = LegitimationMsg { hop_limit: hl, ..msg };
            self.sim.multicast(me, Message::Legitimation { msg: fwd, route: Vec::new() });
        }
    }
}

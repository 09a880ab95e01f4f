//! DIO/DAO exchange, signed initialization and version updates.

use std::collections::BTreeSet;

use serde_json::json;

use super::{Scheme, World};
use crate::adversary::Role;
use crate::chains::{hash_forward, ChainElement, Primitives};
use crate::dodag::{NodeId, Rank, SchemeStore, VersionNumber};
use crate::error::Result;
use crate::message::Message;
use crate::sim::Wire;
use crate::vera::{vera_derive_child_element, vera_verify_parent_rank, vera_verify_version, VeraInitMsg, VeraNodeStore, VeraUpdateMsg};
use crate::verapp::{
    verapp_verify_parent_rank, verapp_verify_version, VeraPlusInitMsg, VeraPlusStore, VeraPlusUpdateMsg,
};

/// What the chain forger remembers from the withheld version.
#[derive(Default, Debug, Clone)]
pub(crate) struct ForgerState {
    pub withheld: Option<Withheld>,
    pub fired: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Withheld {
    pub vn: u32,
    pub v: ChainElement,
    pub rank: u32,
    pub elem: ChainElement,
    pub key: Option<ChainElement>,
}

const DIO_KINDS: [&str; 3] = ["dio", "vera:dio", "vera++:dio"];

impl World {
    pub(crate) fn install_jamming(&mut self) {
        let Some(spec) = self.adv.spec.clone() else { return };
        if !spec.jam {
            return;
        }
        for m in self.adv.attackers().collect::<Vec<_>>() {
            for role in self.adv.roles(m).to_vec() {
                if let Role::Forger { victims } = role {
                    let i = spec.at_version;
                    self.sim.set_jam(Some(Box::new(move |from, to, kind, version| {
                        victims.contains(&to)
                            && from != m
                            && DIO_KINDS.contains(&kind)
                            && version.is_some_and(|v| v == i || v == i + 1)
                    })));
                }
            }
        }
    }

    /// Root floods the signed initialization (VeRA / VeRA++ only).
    pub fn run_init(&mut self) -> Result<()> {
        if self.initialized {
            return Ok(());
        }
        self.initialized = true;
        let msg = match self.cfg.scheme {
            Scheme::Plain => return Ok(()),
            Scheme::Vera => Message::VeraInit(VeraInitMsg::create(&self.chains, self.signer(), 0)),
            Scheme::VeraPlus => Message::VeraPlusInit(VeraPlusInitMsg::create(&self.chains, self.signer(), 0)),
        };
        self.sim.multicast(self.root, msg);
        self.drain()
    }

    /// Root issues version `i` and the network settles.
    pub fn run_version(&mut self, i: u32) -> Result<()> {
        self.run_init()?;
        if i as usize > self.cfg.n {
            return Err(crate::error::Error::ConfigInvalid(format!("version {i} beyond chain length {}", self.cfg.n)));
        }
        self.root_version = i;
        let root = self.root;
        {
            let st = self.nodes.get_mut(&root).unwrap();
            st.version = VersionNumber(i);
            st.children.clear();
            st.element = Some(self.chains.rank_element(i as usize, 0));
        }
        self.note(root, "version", json!({"version": i}));
        let msg = match self.cfg.scheme {
            Scheme::Plain => Message::Dio { version: i, rank: 0, repair: false },
            Scheme::Vera => Message::VeraDio { update: VeraUpdateMsg::root_update(&self.chains, 0, i as usize), repair: false },
            Scheme::VeraPlus => {
                Message::VeraPlusDio { update: VeraPlusUpdateMsg::root_update(&self.chains, 0, i as usize), repair: false }
            }
        };
        self.sim.multicast(root, msg);
        self.drain()?;
        self.version_forgery(i)
    }

    fn version_forgery(&mut self, i: u32) -> Result<()> {
        if self.adv.at_version() != i {
            return Ok(());
        }
        let forgers: Vec<NodeId> =
            self.adv.attackers().filter(|&m| self.adv.has(m, |r| *r == Role::VersionForger)).collect();
        for m in forgers {
            let st = &self.nodes[&m];
            let rank = st.rank.map_or(0, |r| r.0);
            let elem = st.element.unwrap_or(ChainElement::zero(self.cfg.suite.width()));
            let junk = self.cfg.suite.random_element(&mut self.rng);
            let msg = match self.cfg.scheme {
                Scheme::Plain => Message::Dio { version: i + 1, rank, repair: false },
                Scheme::Vera => Message::VeraDio {
                    update: VeraUpdateMsg { vn: i + 1, v: junk, mac_next: junk, rank_elem: elem, sender_rank: rank },
                    repair: false,
                },
                Scheme::VeraPlus => Message::VeraPlusDio {
                    update: VeraPlusUpdateMsg { vn: i + 1, v: junk, cipher: junk, rank_elem: elem, sender_rank: rank },
                    repair: false,
                },
            };
            self.note(m, "forged-version", json!({"version": i + 1}));
            self.sim.multicast(m, msg);
        }
        self.drain()
    }

    pub(crate) fn on_init(&mut self, me: NodeId, msg: Message) {
        if me == self.root || !matches!(self.nodes[&me].scheme, SchemeStore::Plain) {
            return;
        }
        let (suite, l) = (self.cfg.suite, self.cfg.l);
        let store = match &msg {
            Message::VeraInit(m) => VeraNodeStore::from_init(m, &self.vk, suite, l).map(SchemeStore::Vera).map_err(|e| format!("{e:?}")),
            Message::VeraPlusInit(m) => {
                VeraPlusStore::from_init(m, &self.vk, suite, l).map(SchemeStore::VeraPlus).map_err(|e| format!("{e:?}"))
            }
            _ => return,
        };
        match store {
            Ok(s) => {
                self.nodes.get_mut(&me).unwrap().scheme = s;
                self.sim.multicast(me, msg);
            }
            Err(reason) => self.note(me, "reject", json!({"msg": msg.kind(), "reason": reason})),
        }
    }

    /// Rank and element a node currently puts on the air.
    pub(crate) fn advertised(&self, n: NodeId) -> Option<(Rank, Option<ChainElement>)> {
        let st = &self.nodes[&n];
        let rank = st.rank?;
        let honest = (rank, st.element);
        for role in self.active_roles(n) {
            match role {
                Role::Spoofer { delta } => {
                    let claim = delta.map_or(0, |d| rank.0.saturating_sub(d));
                    return Some((Rank(claim), st.element));
                }
                Role::Replayer => {
                    let p = st.preferred_parent?;
                    return Some((st.heard[&p], st.elements.get(&p).copied()));
                }
                _ => {}
            }
        }
        Some(honest)
    }

    /// Rank used in upward traffic: replayers use their true rank toward parents.
    pub(crate) fn upward_rank(&self, n: NodeId) -> Option<Rank> {
        if self.active_roles(n).contains(&Role::Replayer) {
            self.nodes[&n].rank
        } else {
            self.advertised(n).map(|a| a.0)
        }
    }

    fn withholds(&self, n: NodeId) -> bool {
        let i = self.adv.at_version();
        let v = self.nodes[&n].version.0;
        self.adv.has(n, |r| matches!(r, Role::Forger { .. })) && (v == i || v == i + 1)
    }

    pub(crate) fn dio_for(&self, n: NodeId, repair: bool) -> Option<Message> {
        let (rank, elem) = self.advertised(n)?;
        let st = &self.nodes[&n];
        let zero = ChainElement::zero(self.cfg.suite.width());
        Some(match &st.scheme {
            SchemeStore::Plain => Message::Dio { version: st.version.0, rank: rank.0, repair },
            SchemeStore::Vera(s) => Message::VeraDio {
                update: VeraUpdateMsg {
                    vn: s.last_vn,
                    v: s.last_v,
                    mac_next: s.macs.get(&(s.last_vn + 1)).copied().unwrap_or(zero),
                    rank_elem: elem.unwrap_or(zero),
                    sender_rank: rank.0,
                },
                repair,
            },
            SchemeStore::VeraPlus(s) => Message::VeraPlusDio {
                update: VeraPlusUpdateMsg {
                    vn: s.last_vn,
                    v: s.last_v,
                    cipher: s.key.unwrap_or(s.cn),
                    rank_elem: elem.unwrap_or(zero),
                    sender_rank: rank.0,
                },
                repair,
            },
        })
    }

    pub(crate) fn emit_dio(&mut self, n: NodeId, repair: bool) {
        if n == self.root {
            let v = self.root_version;
            let msg = match self.cfg.scheme {
                Scheme::Plain => Message::Dio { version: v, rank: 0, repair },
                Scheme::Vera => Message::VeraDio { update: VeraUpdateMsg::root_update(&self.chains, 0, v as usize), repair },
                Scheme::VeraPlus => {
                    Message::VeraPlusDio { update: VeraPlusUpdateMsg::root_update(&self.chains, 0, v as usize), repair }
                }
            };
            self.sim.multicast(n, msg);
            return;
        }
        if self.withholds(n) {
            return;
        }
        if let Some(msg) = self.dio_for(n, repair) {
            self.sim.multicast(n, msg);
        }
    }

    pub(crate) fn on_dio(&mut self, me: NodeId, from: NodeId, msg: Message) {
        if me == self.root {
            return;
        }
        let (vn, sender_rank, elem, repair) = match &msg {
            Message::Dio { version, rank, repair } => (*version, *rank, None, *repair),
            Message::VeraDio { update: u, repair } => (u.vn, u.sender_rank, Some(u.rank_elem), *repair),
            Message::VeraPlusDio { update: u, repair } => (u.vn, u.sender_rank, Some(u.rank_elem), *repair),
            _ => return,
        };
        let forger_snapshot = self.forger_snapshot(me, vn);
        // version check
        let st = self.nodes.get_mut(&me).unwrap();
        let mut adopted = false;
        let verdict: std::result::Result<(), String> = match (&mut st.scheme, &msg) {
            (SchemeStore::Plain, Message::Dio { .. }) => {
                if vn < st.version.0 {
                    return;
                }
                adopted = vn > st.version.0;
                Ok(())
            }
            (SchemeStore::Vera(s), Message::VeraDio { update, .. }) => {
                if vn < s.last_vn {
                    return;
                }
                if vn > s.last_vn {
                    adopted = true;
                    vera_verify_version(s, update).map_err(|e| format!("{e:?}"))
                } else if update.v != s.last_v {
                    Err("ChainMismatch".into())
                } else {
                    Ok(())
                }
            }
            (SchemeStore::VeraPlus(s), Message::VeraPlusDio { update, .. }) => {
                if vn < s.last_vn {
                    return;
                }
                if vn > s.last_vn {
                    adopted = true;
                    verapp_verify_version(s, update).map_err(|e| format!("{e:?}"))
                } else if update.v != s.last_v {
                    Err("ChainMismatch".into())
                } else {
                    Ok(())
                }
            }
            // uninitialized or mismatched scheme
            _ => Err("Uninitialized".into()),
        };
        if let Err(reason) = verdict {
            self.note(me, "reject", json!({"from": from, "version": vn, "reason": reason}));
            return;
        }
        if adopted {
            let st = self.nodes.get_mut(&me).unwrap();
            st.reset_for_version(VersionNumber(vn));
            self.note(me, "adopt", json!({"version": vn, "from": from}));
        }
        // rank check
        let st = self.nodes.get_mut(&me).unwrap();
        let rank_ok: std::result::Result<(), String> = match (&mut st.scheme, &msg) {
            (SchemeStore::Vera(s), Message::VeraDio { update, .. }) => {
                vera_verify_parent_rank(s, update.sender_rank, &update.rank_elem).map_err(|e| format!("{e:?}"))
            }
            (SchemeStore::VeraPlus(s), Message::VeraPlusDio { update, .. }) => {
                verapp_verify_parent_rank(s, update.sender_rank, &update.rank_elem, &update.cipher).map_err(|e| format!("{e:?}"))
            }
            _ => Ok(()),
        };
        if let Err(reason) = rank_ok {
            self.note(me, "reject", json!({"from": from, "version": vn, "rank": sender_rank, "reason": reason}));
            return;
        }
        let st = self.nodes.get_mut(&me).unwrap();
        if st.isolated.contains(&from) {
            return;
        }
        st.heard.insert(from, Rank(sender_rank));
        if let Some(e) = elem {
            st.elements.insert(from, e);
        }
        if repair && self.active_roles(me).contains(&Role::Replayer) && self.nodes[&me].preferred_parent == Some(from) {
            // insists on the parent that just repaired against it
            let v = self.nodes[&me].version.0;
            let _ = self.sim.unicast(me, from, Message::Dao { version: v, register: true });
        }
        self.refresh(me);
        if let Some(w) = forger_snapshot {
            self.fire_forgery(me, w);
        }
    }

    /// Recomputes a node's rank; re-advertises and re-registers on change.
    pub(crate) fn refresh(&mut self, me: NodeId) {
        if me == self.root {
            return;
        }
        let cap = self.rank_cap();
        let before = self.advertised(me);
        let old_pp = self.nodes[&me].preferred_parent;
        let attacker_fixed = self.is_attacker(me) && self.nodes[&me].rank.is_some();
        if !attacker_fixed {
            let st = self.nodes.get_mut(&me).unwrap();
            st.recompute(cap);
            st.element = match (st.preferred_parent, st.rank, &st.scheme) {
                (_, _, SchemeStore::Plain) => None,
                (Some(p), Some(r), _) => st.elements.get(&p).and_then(|e| {
                    vera_derive_child_element(&self.cfg.suite, e, st.heard[&p].0, r.0).ok()
                }),
                _ => None,
            };
        }
        let new_pp = self.nodes[&me].preferred_parent;
        if new_pp != old_pp {
            let v = self.nodes[&me].version.0;
            if let Some(o) = old_pp {
                if self.topology().adjacent(me, o) {
                    let _ = self.sim.unicast(me, o, Message::Dao { version: v, register: false });
                }
            }
            if let Some(p) = new_pp {
                let _ = self.sim.unicast(me, p, Message::Dao { version: v, register: true });
            }
        }
        if self.advertised(me) != before {
            self.emit_dio(me, false);
        }
    }

    pub(crate) fn on_dao(&mut self, me: NodeId, from: NodeId, version: u32, register: bool) {
        let st = self.nodes.get_mut(&me).unwrap();
        if version != st.version.0 {
            return;
        }
        if register {
            st.children.insert(from);
            self.after_child_registration(me, from);
        } else {
            st.children.remove(&from);
        }
    }

    /// Re-evaluates after a topology change or a detected inconsistency.
    pub fn local_repair(&mut self, node: NodeId) -> Result<()> {
        self.start_local_repair(node);
        self.drain()
    }

    pub(crate) fn start_local_repair(&mut self, node: NodeId) {
        let neighbors: BTreeSet<NodeId> = self.topology().neighbors(node).collect();
        let st = self.nodes.get_mut(&node).unwrap();
        st.heard.retain(|n, _| neighbors.contains(n));
        st.elements.retain(|n, _| neighbors.contains(n));
        st.children.retain(|n| neighbors.contains(n));
        self.note(node, "local-repair", json!({}));
        self.refresh(node);
        self.emit_dio(node, true);
    }

    /// Removes `suspect` from `me`'s view for good.
    pub(crate) fn isolate(&mut self, me: NodeId, suspect: NodeId) {
        let st = self.nodes.get_mut(&me).unwrap();
        if !st.isolated.insert(suspect) {
            return;
        }
        st.heard.remove(&suspect);
        st.elements.remove(&suspect);
        st.children.remove(&suspect);
        self.note(me, "isolate", json!({"suspect": suspect}));
        self.refresh(me);
    }

    fn forger_snapshot(&self, me: NodeId, vn: u32) -> Option<Withheld> {
        let i = self.adv.at_version();
        if self.forger.fired || !self.adv.has(me, |r| matches!(r, Role::Forger { .. })) || vn != i.saturating_add(1) {
            return None;
        }
        let st = &self.nodes[&me];
        if st.version.0 != i {
            return None;
        }
        let (v, key) = match &st.scheme {
            SchemeStore::Vera(s) => (s.last_v, None),
            SchemeStore::VeraPlus(s) => (s.last_v, s.key),
            SchemeStore::Plain => return None,
        };
        Some(Withheld { vn: i, v, rank: st.rank?.0, elem: st.element?, key })
    }

    /// Feeds each victim the withheld update `i` with forged material, then update
    /// `i+1` claiming rank 0 on the forged chain.
    fn fire_forgery(&mut self, m: NodeId, w: Withheld) {
        if self.nodes[&m].version.0 != w.vn + 1 {
            return;
        }
        self.forger.fired = true;
        self.forger.withheld = Some(w.clone());
        let victims = match self.adv.roles(m).iter().find_map(|r| match r {
            Role::Forger { victims } => Some(victims.clone()),
            _ => None,
        }) {
            Some(v) => v,
            None => return,
        };
        let s = self.cfg.suite;
        let l = self.cfg.l as u64;
        let x_forged = s.random_element(&mut self.rng);
        let (v_next, scheme) = match &self.nodes[&m].scheme {
            SchemeStore::Vera(st) => (st.last_v, Scheme::Vera),
            SchemeStore::VeraPlus(st) => (st.last_v, Scheme::VeraPlus),
            SchemeStore::Plain => return,
        };
        let forged_elem = s.hash(&x_forged);
        let (stale, fresh) = match scheme {
            Scheme::Vera => {
                let forged_mac = s.mac(&v_next, &hash_forward(&s, &x_forged, l + 1));
                (
                    Message::VeraDio {
                        update: VeraUpdateMsg { vn: w.vn, v: w.v, mac_next: forged_mac, rank_elem: w.elem, sender_rank: w.rank },
                        repair: false,
                    },
                    Message::VeraDio {
                        update: VeraUpdateMsg { vn: w.vn + 1, v: v_next, mac_next: forged_mac, rank_elem: forged_elem, sender_rank: 0 },
                        repair: false,
                    },
                )
            }
            _ => {
                let guess = s.random_element(&mut self.rng);
                let key = w.key.unwrap_or(guess);
                (
                    Message::VeraPlusDio {
                        update: VeraPlusUpdateMsg { vn: w.vn, v: w.v, cipher: key, rank_elem: w.elem, sender_rank: w.rank },
                        repair: false,
                    },
                    Message::VeraPlusDio {
                        update: VeraPlusUpdateMsg { vn: w.vn + 1, v: v_next, cipher: guess, rank_elem: forged_elem, sender_rank: 0 },
                        repair: false,
                    },
                )
            }
        };
        self.note(m, "forged-chain", json!({"victims": victims, "version": w.vn + 1}));
        for v in victims {
            let _ = self.sim.unicast(m, v, stale.clone());
            let _ = self.sim.unicast(m, v, fresh.clone());
        }
    }
}

//! The protocol engine: node states driven by the discrete-event fabric.

mod detect;
mod formation;
mod trailrun;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adversary::{Adversary, Role};
use crate::bloom::BloomParams;
use crate::chains::{ChainSet, RootSigner, Suite, VerifyHandle};
use crate::dodag::{Dodag, NodeId, NodeState};
use crate::error::{Error, Result};
use crate::message::Message;
use crate::sim::{Event, EventKind, LogEntry, LossModel, Sim};
use crate::topology::Topology;

pub use trailrun::TrailMode;

/// How DODAG formation authenticates versions and ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Plain,
    Vera,
    VeraPlus,
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub scheme: Scheme,
    pub suite: Suite,
    /// Version updates the root can issue.
    pub n: usize,
    pub l: u32,
    pub bloom: BloomParams,
    pub challenge_response: bool,
    pub seed: u64,
    pub loss: f64,
    pub max_events: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            scheme: Scheme::Plain,
            suite: Suite::Production,
            n: 3,
            l: 64,
            bloom: BloomParams::for_fanout(2),
            challenge_response: false,
            seed: 0,
            loss: 0.0,
            max_events: 2_000_000,
        }
    }
}

pub(crate) const TAG_DIS: u32 = 1 << 24;
pub(crate) const TAG_CHALLENGE: u32 = 2 << 24;
pub(crate) const TAG_ADJUDICATE: u32 = 3 << 24;
pub(crate) const TAG_TRAIL_UP: u32 = 4 << 24;
pub(crate) const TAG_TRAIL_DOWN: u32 = 5 << 24;
pub(crate) const TAG_TRAIL_SINGLE: u32 = 6 << 24;
const TAG_MASK: u32 = 0xff << 24;

pub struct World {
    pub sim: Sim<Message>,
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, NodeState>,
    pub cfg: WorldConfig,
    pub chains: ChainSet,
    signer: RootSigner,
    pub vk: VerifyHandle,
    pub adv: Adversary,
    pub(crate) rng: ChaCha8Rng,
    /// Latest version the root has issued.
    pub root_version: u32,
    initialized: bool,
    pub(crate) det: detect::DetectState,
    pub(crate) tr: trailrun::TrailState,
    pub(crate) forger: formation::ForgerState,
}

impl World {
    pub fn new(topo: Topology, root: NodeId, cfg: WorldConfig, adv: Adversary) -> Result<Self> {
        if !topo.contains(root) {
            return Err(Error::ConfigInvalid(format!("root {root} not in topology")));
        }
        if cfg.n == 0 {
            return Err(Error::ConfigInvalid("need at least one version update".into()));
        }
        if cfg.l == 0 || cfg.l > u16::MAX as u32 {
            return Err(Error::ConfigInvalid(format!("l must be in 1..=65535 (got {})", cfg.l)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696c);
        let chains = ChainSet::generate(cfg.suite, cfg.n, cfg.l as usize, &mut rng);
        let signer = RootSigner::generate(cfg.suite, &mut rng);
        let vk = signer.verifier();
        let nodes = topo
            .nodes()
            .map(|n| (n, if n == root { NodeState::root(n) } else { NodeState::new(n) }))
            .collect();
        let loss = LossModel::with_drop_probability(cfg.loss);
        let mut sim = Sim::new(topo, loss, cfg.seed);
        if let Some(spec) = &adv.spec {
            let attackers: Vec<u32> = adv.attackers().map(|n| n.0).collect();
            sim.note(root, "attack", json!({"attack": spec, "attackers": attackers}).to_string());
        }
        let mut w = World {
            sim,
            root,
            nodes,
            cfg,
            chains,
            signer,
            vk,
            adv,
            rng,
            root_version: 0,
            initialized: false,
            det: Default::default(),
            tr: Default::default(),
            forger: Default::default(),
        };
        w.install_jamming();
        Ok(w)
    }

    pub fn plain(topo: Topology, root: NodeId, seed: u64) -> Self {
        let cfg = WorldConfig { seed, ..WorldConfig::default() };
        World::new(topo, root, cfg, Adversary::none()).expect("root checked by caller")
    }

    pub fn topology(&self) -> &Topology {
        self.sim.topology()
    }

    pub fn is_attacker(&self, n: NodeId) -> bool {
        self.adv.is_attacker(n)
    }

    /// Attack roles are live once the root has reached the trigger version.
    pub(crate) fn active_roles(&self, n: NodeId) -> &[Role] {
        if self.root_version >= self.adv.at_version() {
            self.adv.roles(n)
        } else {
            &[]
        }
    }

    pub(crate) fn note(&mut self, node: NodeId, kind: &str, detail: serde_json::Value) {
        self.sim.note(node, kind, detail.to_string());
    }

    pub(crate) fn rank_cap(&self) -> u32 {
        self.nodes.len() as u32 + 1
    }

    /// Processes events until the queue is empty.
    pub fn drain(&mut self) -> Result<()> {
        let start = self.sim.processed();
        while let Some(ev) = self.sim.next_event() {
            if self.sim.processed() - start > self.cfg.max_events {
                return Err(Error::Nonquiescent(self.cfg.max_events));
            }
            self.handle(ev);
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event<Message>) {
        match ev.kind {
            EventKind::Deliver { from, to, msg, .. } => {
                if self.nodes[&to].isolated.contains(&from) {
                    return;
                }
                self.on_message(to, from, msg);
            }
            EventKind::Timer { node, tag } => {
                let arg = NodeId(tag & !TAG_MASK);
                match tag & TAG_MASK {
                    TAG_DIS => self.on_dis_timeout(node, arg),
                    TAG_CHALLENGE => self.on_challenge_timeout(node, arg),
                    TAG_ADJUDICATE => self.on_adjudicate(),
                    TAG_TRAIL_UP => self.on_trail_up_deadline(node),
                    TAG_TRAIL_DOWN => self.on_trail_down_deadline(node),
                    TAG_TRAIL_SINGLE => self.on_trail_single_deadline(node),
                    _ => {}
                }
            }
        }
    }

    fn on_message(&mut self, me: NodeId, from: NodeId, msg: Message) {
        match msg {
            Message::Dio { .. } | Message::VeraDio { .. } | Message::VeraPlusDio { .. } => self.on_dio(me, from, msg),
            Message::VeraInit(_) | Message::VeraPlusInit(_) => self.on_init(me, msg),
            Message::Dao { version, register } => self.on_dao(me, from, version, register),
            Message::Dis { target } => self.on_dis(me, target),
            Message::Announce { version, rank } => self.on_announce(me, from, version, rank),
            Message::Data(d) => self.on_data(me, from, d),
            Message::Challenge(c) => self.on_challenge(me, from, c),
            Message::Response(r) => self.on_response(me, from, r),
            Message::Vouch { challenge, response } => self.on_vouch(me, from, challenge, response),
            Message::Notice { note, path } => self.on_notice(me, note, path),
            Message::Legitimation { msg, route } => self.on_legitimation(me, msg, route),
            Message::TrailUp { nonce, array } => self.on_trail_up(me, from, nonce, array),
            Message::TrailDown(a) => self.on_trail_down(me, from, a),
            Message::TrailTest(t) => self.on_trail_test(me, from, t),
            Message::TrailReply(r) => self.on_trail_reply(me, r),
        }
    }

    /// Snapshot of the current DODAG.
    pub fn dodag(&self) -> Dodag {
        let unreachable = self.nodes.values().filter(|s| s.rank.is_none()).map(|s| s.id).collect();
        Dodag { root: self.root, nodes: self.nodes.clone(), unreachable }
    }

    /// One `state` note per node: what the report needs to judge attack effects.
    pub fn emit_state_notes(&mut self) {
        let bfs = self.topology().hop_distances(self.root);
        let rows: Vec<_> = self
            .nodes
            .values()
            .map(|s| {
                json!({
                    "node": s.id,
                    "rank": s.rank.map(|r| r.0),
                    "bfs": bfs.get(&s.id),
                    "parent": s.preferred_parent,
                    "version": s.version.0,
                    "attacker": self.adv.is_attacker(s.id),
                })
            })
            .collect();
        for r in rows {
            let id = NodeId(r["node"].as_u64().unwrap() as u32);
            self.note(id, "state", r);
        }
    }

    pub fn log(&self) -> &[LogEntry] {
        self.sim.log()
    }

    pub fn into_log(self) -> Vec<LogEntry> {
        self.sim.into_log()
    }

    pub(crate) fn sign(&self, msg: &[u8]) -> crate::chains::Signature {
        self.signer.sign(msg)
    }

    pub(crate) fn signer(&self) -> &RootSigner {
        &self.signer
    }
}

//! Deterministic discrete-event message fabric.
//!
//! Events are ordered by `(time, seq)`. Every link has a latency of one tick. Loss
//! draws come only from the simulation's own seeded generator, so two runs with the
//! same seed produce the same log.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dodag::NodeId;
use crate::error::{Error, Result};
use crate::topology::Topology;

pub type Tick = u64;

/// Anything that travels over a link.
pub trait Wire: Clone {
    fn kind(&self) -> &'static str;
    /// Size used for metrics, in bits.
    fn size_bits(&self) -> u64;
    /// DODAG version the message refers to, if any (for jamming predicates).
    fn version(&self) -> Option<u32> {
        None
    }
}

#[derive(Debug, Clone)]
pub enum EventKind<M> {
    Deliver { from: NodeId, to: NodeId, tx: u64, msg: M },
    Timer { node: NodeId, tag: u32 },
}

#[derive(Debug, Clone)]
pub struct Event<M> {
    pub time: Tick,
    pub seq: u64,
    pub kind: EventKind<M>,
}

impl<M> PartialEq for Event<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl<M> Eq for Event<M> {}
impl<M> PartialOrd for Event<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Event<M> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// `(from, to, kind, version) -> drop?`
pub type JamPredicate = Box<dyn Fn(NodeId, NodeId, &str, Option<u32>) -> bool + Send>;

#[derive(Default)]
pub struct LossModel {
    pub drop_probability: f64,
    pub jam: Option<JamPredicate>,
}

impl LossModel {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn with_drop_probability(p: f64) -> Self {
        LossModel { drop_probability: p.clamp(0.0, 1.0), jam: None }
    }
}

/// One JSONL line. `kind` is prefixed `tx:`, `rx:`, `timer:` or `note:`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: Tick,
    pub seq: u64,
    pub from: NodeId,
    pub to: Option<NodeId>,
    pub kind: String,
    pub bytes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub struct Sim<M> {
    topo: Topology,
    now: Tick,
    next_seq: u64,
    next_tx: u64,
    queue: BinaryHeap<Event<M>>,
    loss: LossModel,
    rng: ChaCha8Rng,
    log: Vec<LogEntry>,
    processed: usize,
}

impl<M: Wire> Sim<M> {
    pub fn new(topo: Topology, loss: LossModel, seed: u64) -> Self {
        Sim {
            topo,
            now: 0,
            next_seq: 0,
            next_tx: 0,
            queue: BinaryHeap::new(),
            loss,
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: Vec::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topo
    }

    pub fn set_jam(&mut self, jam: Option<JamPredicate>) {
        self.loss.jam = jam;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn survives(&mut self, from: NodeId, to: NodeId, msg: &M) -> bool {
        if let Some(jam) = &self.loss.jam {
            if jam(from, to, msg.kind(), msg.version()) {
                return false;
            }
        }
        let p = self.loss.drop_probability;
        !(p > 0.0 && self.rng.gen::<f64>() < p)
    }

    fn record_tx(&mut self, from: NodeId, to: Option<NodeId>, msg: &M) -> u64 {
        let tx = self.next_tx;
        self.next_tx += 1;
        let seq = self.seq();
        self.log.push(LogEntry {
            t: self.now,
            seq,
            from,
            to,
            kind: format!("tx:{}", msg.kind()),
            bytes: msg.size_bits() as f64 / 8.0,
            detail: None,
        });
        tx
    }

    fn schedule_delivery(&mut self, from: NodeId, to: NodeId, tx: u64, msg: M) -> bool {
        if !self.survives(from, to, &msg) {
            return false;
        }
        let seq = self.seq();
        self.queue.push(Event { time: self.now + 1, seq, kind: EventKind::Deliver { from, to, tx, msg } });
        true
    }

    /// Link-layer unicast to a neighbour. Returns whether the frame survived loss.
    pub fn unicast(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<bool> {
        if !self.topo.adjacent(from, to) {
            return Err(Error::UnknownNeighbor(to, from));
        }
        let tx = self.record_tx(from, Some(to), &msg);
        Ok(self.schedule_delivery(from, to, tx, msg))
    }

    /// Link-local multicast: one transmission, one delivery per surviving neighbour.
    pub fn multicast(&mut self, from: NodeId, msg: M) -> usize {
        let tx = self.record_tx(from, None, &msg);
        let neighbors: Vec<_> = self.topo.neighbors(from).collect();
        neighbors
            .into_iter()
            .filter(|&to| self.schedule_delivery(from, to, tx, msg.clone()))
            .count()
    }

    pub fn timer(&mut self, node: NodeId, delay: Tick, tag: u32) {
        let seq = self.seq();
        self.queue.push(Event { time: self.now + delay, seq, kind: EventKind::Timer { node, tag } });
    }

    /// Local annotation (verdicts, outcomes) written straight into the log.
    pub fn note(&mut self, node: NodeId, kind: &str, detail: impl Into<String>) {
        let seq = self.seq();
        self.log.push(LogEntry {
            t: self.now,
            seq,
            from: node,
            to: None,
            kind: format!("note:{kind}"),
            bytes: 0.0,
            detail: Some(detail.into()),
        });
    }

    /// Pops the next event, advancing the clock and logging it.
    pub fn next_event(&mut self) -> Option<Event<M>> {
        let ev = self.queue.pop()?;
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        self.processed += 1;
        let entry = match &ev.kind {
            EventKind::Deliver { from, to, msg, .. } => LogEntry {
                t: ev.time,
                seq: ev.seq,
                from: *from,
                to: Some(*to),
                kind: format!("rx:{}", msg.kind()),
                bytes: msg.size_bits() as f64 / 8.0,
                detail: None,
            },
            EventKind::Timer { node, tag } => LogEntry {
                t: ev.time,
                seq: ev.seq,
                from: *node,
                to: Some(*node),
                kind: format!("timer:{tag}"),
                bytes: 0.0,
                detail: None,
            },
        };
        self.log.push(entry);
        Some(ev)
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    /// Drains the queue through `handler`; errors if `max_events` is hit first.
    pub fn run_until_quiescent<F>(&mut self, max_events: usize, mut handler: F) -> Result<()>
    where
        F: FnMut(&mut Sim<M>, Event<M>),
    {
        let start = self.processed;
        while !self.queue.is_empty() {
            if self.processed - start >= max_events {
                return Err(Error::Nonquiescent(max_events));
            }
            let ev = self.next_event().expect("queue checked non-empty");
            handler(self, ev);
        }
        Ok(())
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn into_log(self) -> Vec<LogEntry> {
        self.log
    }
}

pub fn write_jsonl<W: Write>(mut w: W, log: &[LogEntry]) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<LogEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Ping(u32);

    impl Wire for Ping {
        fn kind(&self) -> &'static str {
            "ping"
        }
        fn size_bits(&self) -> u64 {
            8
        }
        fn version(&self) -> Option<u32> {
            Some(self.0)
        }
    }

    fn star() -> Topology {
        Topology::from_links(&[0, 1, 2, 3], &[[0, 1], [0, 2], [0, 3]]).unwrap()
    }

    // flood once per node: every receiver re-multicasts the first ping it sees
    fn flood(seed: u64, p: f64) -> Vec<LogEntry> {
        let mut sim = Sim::new(Topology::unit_disk(20, 0.4, 3), LossModel::with_drop_probability(p), seed);
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(NodeId(0));
        sim.multicast(NodeId(0), Ping(1));
        sim.run_until_quiescent(10_000, |sim, ev| {
            if let EventKind::Deliver { to, msg, .. } = ev.kind {
                if seen.insert(to) {
                    sim.multicast(to, msg);
                }
            }
        })
        .unwrap();
        sim.into_log()
    }

    #[test]
    fn empty_queue_gives_empty_log() {
        let mut sim: Sim<Ping> = Sim::new(star(), LossModel::lossless(), 1);
        sim.run_until_quiescent(10, |_, _| {}).unwrap();
        assert!(sim.log().is_empty());
    }

    #[test]
    fn multicast_reaches_every_neighbor() {
        let mut sim = Sim::new(star(), LossModel::lossless(), 1);
        assert_eq!(sim.multicast(NodeId(0), Ping(0)), 3);
    }

    #[test]
    fn jamming_drops_only_the_targeted_version_on_one_link() {
        let mut sim = Sim::new(star(), LossModel::lossless(), 1);
        sim.set_jam(Some(Box::new(|_, to, _, v| to == NodeId(2) && v == Some(4))));
        assert_eq!(sim.multicast(NodeId(0), Ping(4)), 2);
        assert_eq!(sim.multicast(NodeId(0), Ping(5)), 3);
        let mut got = Vec::new();
        sim.run_until_quiescent(100, |_, ev| {
            if let EventKind::Deliver { to, msg, .. } = ev.kind {
                got.push((to.0, msg.0));
            }
        })
        .unwrap();
        assert!(!got.contains(&(2, 4)));
        assert!(got.contains(&(2, 5)));
    }

    #[test]
    fn same_seed_same_log() {
        assert_eq!(flood(42, 0.3), flood(42, 0.3));
        let a = flood(42, 0.5);
        let rx = |log: &[LogEntry]| log.iter().filter(|e| e.kind.starts_with("rx:")).count();
        assert_eq!(rx(&a), rx(&flood(42, 0.5)));
    }

    #[test]
    fn total_loss_leaves_only_local_events() {
        let log = flood(1, 1.0);
        assert!(!log.is_empty());
        assert!(log.iter().all(|e| e.kind.starts_with("tx:") && e.from == NodeId(0)));
    }

    #[test]
    fn deliveries_are_causal_and_ordered() {
        let log = flood(9, 0.1);
        let mut tx_time = std::collections::BTreeMap::new();
        let mut last = (0, 0);
        for e in &log {
            if e.kind.starts_with("tx:") {
                tx_time.entry(e.from).or_insert(e.t);
            }
            if e.kind.starts_with("rx:") {
                assert!(e.t >= tx_time[&e.from] + 1);
                assert!(e.t >= last.0);
                last = (e.t, e.seq);
            }
        }
    }

    #[test]
    fn runaway_handler_is_reported() {
        let mut sim = Sim::new(star(), LossModel::lossless(), 1);
        sim.multicast(NodeId(0), Ping(0));
        let err = sim
            .run_until_quiescent(50, |sim, ev| {
                if let EventKind::Deliver { to, msg, .. } = ev.kind {
                    sim.multicast(to, msg);
                }
            })
            .unwrap_err();
        assert!(matches!(err, Error::Nonquiescent(50)));
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = flood(2, 0.0);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"t\":"));
        assert_eq!(read_jsonl(&text).unwrap(), log);
    }
}

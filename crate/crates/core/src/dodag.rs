//! DODAG state, datagram validation and the one-shot `build_dodag` entry point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::verapp::VeraPlusStore;
use crate::vera::VeraNodeStore;
use crate::chains::ChainElement;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rank(pub u32);

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionNumber(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Datagram {
    pub src: NodeId,
    pub dst: NodeId,
    pub direction: Direction,
    pub sender_rank: Rank,
    pub tag: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Inconsistency {
    RankDirection,
    AnnouncementMismatch,
    ChildRankViolation,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Consistency {
    Consistent,
    Inconsistent(Inconsistency),
}

/// Per-scheme verification material.
#[derive(Clone, Debug, Default)]
pub enum SchemeStore {
    #[default]
    Plain,
    Vera(VeraNodeStore),
    VeraPlus(VeraPlusStore),
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub rank: Option<Rank>,
    pub parent_set: Vec<NodeId>,
    pub preferred_parent: Option<NodeId>,
    pub children: BTreeSet<NodeId>,
    pub announced_ranks: BTreeMap<NodeId, Rank>,
    pub version: VersionNumber,
    /// Ranks advertised by neighbours in the current version.
    pub heard: BTreeMap<NodeId, Rank>,
    /// Verified rank elements of neighbours, current version.
    pub elements: BTreeMap<NodeId, ChainElement>,
    /// Own rank element, current version.
    pub element: Option<ChainElement>,
    pub isolated: BTreeSet<NodeId>,
    pub scheme: SchemeStore,
}

impl NodeState {
    pub fn new(id: NodeId) -> Self {
        NodeState {
            id,
            rank: None,
            parent_set: Vec::new(),
            preferred_parent: None,
            children: BTreeSet::new(),
            announced_ranks: BTreeMap::new(),
            version: VersionNumber(0),
            heard: BTreeMap::new(),
            elements: BTreeMap::new(),
            element: None,
            isolated: BTreeSet::new(),
            scheme: SchemeStore::Plain,
        }
    }

    pub fn root(id: NodeId) -> Self {
        let mut s = NodeState::new(id);
        s.rank = Some(Rank(0));
        s
    }

    /// Clears per-version state when a new version is adopted.
    pub fn reset_for_version(&mut self, v: VersionNumber) {
        self.version = v;
        self.rank = None;
        self.parent_set.clear();
        self.preferred_parent = None;
        self.children.clear();
        self.announced_ranks.clear();
        self.heard.clear();
        self.elements.clear();
        self.element = None;
    }

    /// Hop-count objective: best = lowest (rank, id) neighbour. Returns the new rank.
    /// Ranks above `cap` detach the node (bounds count-to-infinity after repairs).
    pub fn recompute(&mut self, cap: u32) -> Option<Rank> {
        let mut cands: Vec<(Rank, NodeId)> = self
            .heard
            .iter()
            .filter(|(n, _)| !self.isolated.contains(n))
            .map(|(&n, &r)| (r, n))
            .collect();
        cands.sort();
        match cands.first() {
            Some(&(best, _)) if best.0 < cap => {
                let own = Rank(best.0 + 1);
                self.rank = Some(own);
                self.parent_set = cands.iter().filter(|(r, _)| *r < own).map(|&(_, n)| n).collect();
                self.preferred_parent = self.parent_set.first().copied();
            }
            _ => {
                self.rank = None;
                self.parent_set.clear();
                self.preferred_parent = None;
            }
        }
        self.rank
    }
}

/// Rank-based data-path check with the announcement extension.
pub fn validate_datagram(topo: &Topology, receiver: &NodeState, from: NodeId, d: &Datagram) -> Result<Consistency> {
    if !topo.adjacent(receiver.id, from) {
        return Err(Error::UnknownNeighbor(from, receiver.id));
    }
    let own = receiver.rank.unwrap_or(Rank(u32::MAX));
    let announced = receiver.announced_ranks.get(&from);
    if d.direction == Direction::Up && receiver.children.contains(&from) {
        if let Some(a) = announced {
            if *a <= own {
                return Ok(Consistency::Inconsistent(Inconsistency::ChildRankViolation));
            }
        }
    }
    if let Some(a) = announced {
        if *a != d.sender_rank {
            return Ok(Consistency::Inconsistent(Inconsistency::AnnouncementMismatch));
        }
    }
    let ok = match d.direction {
        Direction::Up => d.sender_rank > own,
        Direction::Down => d.sender_rank < own,
    };
    Ok(if ok { Consistency::Consistent } else { Consistency::Inconsistent(Inconsistency::RankDirection) })
}

/// Result of a plain DODAG build.
#[derive(Clone, Debug)]
pub struct Dodag {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, NodeState>,
    pub unreachable: Vec<NodeId>,
}

impl Dodag {
    pub fn rank(&self, n: NodeId) -> Option<Rank> {
        self.nodes.get(&n).and_then(|s| s.rank)
    }

    pub fn max_rank(&self) -> u32 {
        self.nodes.values().filter_map(|s| s.rank).map(|r| r.0).max().unwrap_or(0)
    }
}

/// Builds a DODAG with plain DIO/DAO exchange. Nodes without a path to `root` stay
/// unranked and are listed in `unreachable`.
pub fn build_dodag(topo: &Topology, root: NodeId) -> Result<Dodag> {
    if !topo.contains(root) {
        return Err(Error::ConfigInvalid(format!("root {root} not in topology")));
    }
    let mut w = crate::world::World::plain(topo.clone(), root, 0);
    w.run_version(1)?;
    Ok(w.dodag())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(id: u32, rank: u32) -> NodeState {
        let mut s = NodeState::new(NodeId(id));
        s.rank = Some(Rank(rank));
        s
    }

    fn dg(dir: Direction, r: u32) -> Datagram {
        Datagram { src: NodeId(0), dst: NodeId(0), direction: dir, sender_rank: Rank(r), tag: 0 }
    }

    #[test]
    fn line_of_three() {
        let d = build_dodag(&Topology::line(3), NodeId(0)).unwrap();
        assert_eq!(d.rank(NodeId(2)), Some(Rank(2)));
        assert_eq!(d.nodes[&NodeId(2)].preferred_parent, Some(NodeId(1)));
        assert_eq!(d.nodes[&NodeId(1)].children, BTreeSet::from([NodeId(2)]));
        assert!(d.unreachable.is_empty());
    }

    #[test]
    fn kary_tree_ranks() {
        let d = build_dodag(&Topology::kary(2, 3), NodeId(0)).unwrap();
        assert_eq!(d.nodes.len(), 15);
        assert_eq!(d.max_rank(), 3);
    }

    #[test]
    fn unreachable_nodes_are_flagged() {
        let t = Topology::from_links(&[0, 1, 2, 3], &[[0, 1], [2, 3]]).unwrap();
        let d = build_dodag(&t, NodeId(0)).unwrap();
        assert_eq!(d.unreachable, vec![NodeId(2), NodeId(3)]);
        assert_eq!(d.rank(NodeId(3)), None);
    }

    #[test]
    fn basic_direction_rule() {
        let t = Topology::line(3);
        let r = state(1, 2);
        assert_eq!(validate_datagram(&t, &r, NodeId(2), &dg(Direction::Up, 3)).unwrap(), Consistency::Consistent);
        assert_eq!(
            validate_datagram(&t, &r, NodeId(2), &dg(Direction::Up, 1)).unwrap(),
            Consistency::Inconsistent(Inconsistency::RankDirection)
        );
        assert!(validate_datagram(&t, &state(0, 0), NodeId(2), &dg(Direction::Up, 3)).is_err());
    }

    #[test]
    fn child_announcing_equal_rank() {
        let t = Topology::line(3);
        let mut r = state(1, 2);
        r.children.insert(NodeId(2));
        r.announced_ranks.insert(NodeId(2), Rank(2));
        assert_eq!(
            validate_datagram(&t, &r, NodeId(2), &dg(Direction::Up, 3)).unwrap(),
            Consistency::Inconsistent(Inconsistency::ChildRankViolation)
        );
    }

    #[test]
    fn announcement_mismatch() {
        let t = Topology::line(3);
        let mut r = state(1, 1);
        r.announced_ranks.insert(NodeId(2), Rank(3));
        assert_eq!(
            validate_datagram(&t, &r, NodeId(2), &dg(Direction::Up, 2)).unwrap(),
            Consistency::Inconsistent(Inconsistency::AnnouncementMismatch)
        );
    }

    #[test]
    fn exhaustive_triples_on_a_line() {
        // hand rules, written independently of the implementation's branch order
        let t = Topology::line(3);
        for own in 0..4u32 {
            for child in [false, true] {
                for announced in [None, Some(0u32), Some(1), Some(2), Some(3), Some(4)] {
                    for carried in 0..5u32 {
                        for dir in [Direction::Up, Direction::Down] {
                            let mut r = state(1, own);
                            if child {
                                r.children.insert(NodeId(2));
                            }
                            if let Some(a) = announced {
                                r.announced_ranks.insert(NodeId(2), Rank(a));
                            }
                            let got = validate_datagram(&t, &r, NodeId(2), &dg(dir, carried)).unwrap();
                            let expect = if dir == Direction::Up && child && announced.is_some_and(|a| a <= own) {
                                Consistency::Inconsistent(Inconsistency::ChildRankViolation)
                            } else if announced.is_some_and(|a| a != carried) {
                                Consistency::Inconsistent(Inconsistency::AnnouncementMismatch)
                            } else if (dir == Direction::Up && carried > own) || (dir == Direction::Down && carried < own) {
                                Consistency::Consistent
                            } else {
                                Consistency::Inconsistent(Inconsistency::RankDirection)
                            };
                            assert_eq!(got, expect, "own={own} child={child} ann={announced:?} carried={carried} {dir:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn recompute_picks_lowest_rank_then_id() {
        let mut s = NodeState::new(NodeId(9));
        s.heard.insert(NodeId(5), Rank(2));
        s.heard.insert(NodeId(3), Rank(2));
        s.heard.insert(NodeId(1), Rank(3));
        assert_eq!(s.recompute(64), Some(Rank(3)));
        assert_eq!(s.parent_set, vec![NodeId(3), NodeId(5)]);
        assert_eq!(s.preferred_parent, Some(NodeId(3)));
    }
}

//! Link graphs and the generators used by scenarios.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dodag::NodeId;
use crate::error::Error;

/// Undirected link graph with deterministic (ordered) adjacency.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Topology {
    pub fn new<I: IntoIterator<Item = NodeId>>(nodes: I) -> Self {
        Topology { adj: nodes.into_iter().map(|n| (n, BTreeSet::new())).collect() }
    }

    pub fn from_links(nodes: &[u32], links: &[[u32; 2]]) -> Result<Self, Error> {
        let mut t = Topology::new(nodes.iter().map(|&n| NodeId(n)));
        for &[a, b] in links {
            t.add_link(NodeId(a), NodeId(b))?;
        }
        Ok(t)
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId) -> Result<(), Error> {
        if a == b {
            return Err(Error::ConfigInvalid(format!("self-loop on node {a}")));
        }
        for n in [a, b] {
            if !self.adj.contains_key(&n) {
                return Err(Error::ConfigInvalid(format!("link references unknown node {n}")));
            }
        }
        self.adj.get_mut(&a).unwrap().insert(b);
        self.adj.get_mut(&b).unwrap().insert(a);
        Ok(())
    }

    pub fn remove_node_links(&mut self, n: NodeId) {
        if let Some(neigh) = self.adj.get_mut(&n) {
            let neigh = std::mem::take(neigh);
            for m in neigh {
                self.adj.get_mut(&m).unwrap().remove(&n);
            }
        }
    }

    /// Balanced k-ary tree of height `h`, numbered breadth-first from root 0.
    pub fn kary(k: u32, h: u32) -> Self {
        assert!(k >= 1);
        let mut count: u64 = 0;
        let mut level: u64 = 1;
        for _ in 0..=h {
            count += level;
            level *= k as u64;
        }
        let mut t = Topology::new((0..count as u32).map(NodeId));
        for child in 1..count as u32 {
            let parent = (child - 1) / k;
            t.add_link(NodeId(parent), NodeId(child)).unwrap();
        }
        t
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn line(n: u32) -> Self {
        let mut t = Topology::new((0..n).map(NodeId));
        for i in 1..n {
            t.add_link(NodeId(i - 1), NodeId(i)).unwrap();
        }
        t
    }

    /// Unit-disk graph: `n` points uniform in the unit square, linked when within `radius`.
    pub fn unit_disk(n: u32, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let mut t = Topology::new((0..n).map(NodeId));
        for i in 0..n as usize {
            for j in i + 1..n as usize {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                if (dx * dx + dy * dy).sqrt() <= radius {
                    t.add_link(NodeId(i as u32), NodeId(j as u32)).unwrap();
                }
            }
        }
        t
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }

    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&n).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adj.get(&n).map_or(0, |s| s.len())
    }

    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn links(&self) -> Vec<[u32; 2]> {
        self.adj
            .iter()
            .flat_map(|(&a, s)| s.iter().filter(move |&&b| a < b).map(move |&b| [a.0, b.0]))
            .collect()
    }

    /// Breadth-first hop counts from `root`; unreachable nodes are absent.
    pub fn hop_distances(&self, root: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(root, 0);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.neighbors(u) {
                if !dist.contains_key(&v) {
                    dist.insert(v, d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected_from(&self, root: NodeId) -> bool {
        self.hop_distances(root).len() == self.len()
    }
}

/// Scenario-file form of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TopologySpec {
    Explicit { nodes: Vec<u32>, links: Vec<[u32; 2]> },
    Kary { kary: KaryParams },
    Disk { disk: DiskParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KaryParams {
    pub k: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskParams {
    pub n: u32,
    pub radius: f64,
    pub seed: u64,
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, Error> {
        match self {
            TopologySpec::Explicit { nodes, links } => {
                if nodes.is_empty() {
                    return Err(Error::ConfigInvalid("topology has no nodes".into()));
                }
                Topology::from_links(nodes, links)
            }
            TopologySpec::Kary { kary } => {
                if kary.k < 1 || kary.h > 12 {
                    return Err(Error::ConfigInvalid(format!("unsupported k-ary tree {kary:?}")));
                }
                Ok(Topology::kary(kary.k, kary.h))
            }
            TopologySpec::Disk { disk } => {
                if disk.n == 0 || !(disk.radius > 0.0) {
                    return Err(Error::ConfigInvalid(format!("unsupported disk graph {disk:?}")));
                }
                Ok(Topology::unit_disk(disk.n, disk.radius, disk.seed))
            }
        }
    }
}

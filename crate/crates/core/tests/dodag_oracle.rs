use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trailsim::adversary::Adversary;
use trailsim::dodag::{build_dodag, NodeId};
use trailsim::topology::Topology;
use trailsim::world::{Scheme, World, WorldConfig};

/// Plain breadth-first search over the link list, written without the library's helpers.
fn bfs_oracle(topo: &Topology, root: u32) -> BTreeMap<u32, u32> {
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for [a, b] in topo.links() {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut dist = BTreeMap::from([(root, 0)]);
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        for &v in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(&v) {
                dist.insert(v, dist[&u] + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

fn ranks(d: &trailsim::dodag::Dodag) -> BTreeMap<u32, u32> {
    d.nodes.values().filter_map(|s| s.rank.map(|r| (s.id.0, r.0))).collect()
}

#[test]
fn unit_disk_seed_42_ranks_are_bfs_distances() {
    let topo = Topology::unit_disk(40, 0.3, 42);
    let d = build_dodag(&topo, NodeId(0)).unwrap();
    assert_eq!(ranks(&d), bfs_oracle(&topo, 0));
    for n in &d.unreachable {
        assert!(!bfs_oracle(&topo, 0).contains_key(&n.0));
    }
}

#[test]
fn kary_and_line_ranks_match_oracle() {
    for topo in [Topology::kary(3, 3), Topology::line(9), Topology::kary(2, 5)] {
        let d = build_dodag(&topo, NodeId(0)).unwrap();
        assert_eq!(ranks(&d), bfs_oracle(&topo, 0));
    }
}

#[test]
fn preferred_parent_is_one_hop_closer() {
    let topo = Topology::unit_disk(50, 0.25, 7);
    let d = build_dodag(&topo, NodeId(0)).unwrap();
    let dist = bfs_oracle(&topo, 0);
    for s in d.nodes.values().filter(|s| s.id != NodeId(0)) {
        if let Some(p) = s.preferred_parent {
            assert!(topo.adjacent(s.id, p));
            assert_eq!(dist[&p.0] + 1, dist[&s.id.0]);
        }
    }
}

#[test]
fn honest_runs_never_flag_inconsistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..50u64 {
        let n = rng.gen_range(5..=64);
        let topo = Topology::unit_disk(n, rng.gen_range(0.2..0.5), i);
        for scheme in [Scheme::Plain, Scheme::VeraPlus] {
            let cfg = WorldConfig { scheme, seed: i, challenge_response: true, ..WorldConfig::default() };
            let mut w = World::new(topo.clone(), NodeId(0), cfg, Adversary::none()).unwrap();
            w.run_version(1).unwrap();
            w.run_data_round().unwrap();
            w.run_version(2).unwrap();
            w.run_data_round().unwrap();
            let bad: Vec<_> = w
                .log()
                .iter()
                .filter(|e| matches!(e.kind.as_str(), "note:inconsistent" | "note:challenge" | "note:reject"))
                .collect();
            assert!(bad.is_empty(), "topology {i} ({scheme:?}): {bad:?}");
        }
    }
}

#[test]
fn lossy_formation_never_ranks_below_distance() {
    for seed in 0..10 {
        let topo = Topology::unit_disk(30, 0.35, seed);
        let cfg = WorldConfig { seed, loss: 0.3, ..WorldConfig::default() };
        let mut w = World::new(topo.clone(), NodeId(0), cfg, Adversary::none()).unwrap();
        w.run_version(1).unwrap();
        let dist = bfs_oracle(&topo, 0);
        for (n, r) in ranks(&w.dodag()) {
            assert!(r >= dist[&n], "node {n} rank {r} below distance {}", dist[&n]);
        }
    }
}

//! Attack specifications and the per-node roles they expand into.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dodag::NodeId;
use crate::error::{Error, Result};
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    VersionAttack,
    RankSpoof,
    RankReplay,
    ChainForgery,
    TrailManipulation,
    KChainReplay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailVariant {
    DropChildren,
    Misplace,
    Rearrange,
    WithholdOwn,
    MergeOnBehalf,
    DeleteNonces,
}

impl TrailVariant {
    pub const ALL: [TrailVariant; 6] = [
        TrailVariant::DropChildren,
        TrailVariant::Misplace,
        TrailVariant::Rearrange,
        TrailVariant::WithholdOwn,
        TrailVariant::MergeOnBehalf,
        TrailVariant::DeleteNonces,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrailVariant::DropChildren => "drop_children",
            TrailVariant::Misplace => "misplace",
            TrailVariant::Rearrange => "rearrange",
            TrailVariant::WithholdOwn => "withhold_own",
            TrailVariant::MergeOnBehalf => "merge_on_behalf",
            TrailVariant::DeleteNonces => "delete_nonces",
        }
    }
}

fn default_at_version() -> u32 {
    1
}

fn yes() -> bool {
    true
}

/// `{"kind":"rank_replay","nodes":[9],"at_version":2}` plus kind-specific extras.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub nodes: Vec<u32>,
    #[serde(default = "default_at_version")]
    pub at_version: u32,
    /// rank_spoof: how far below the true rank to claim (default: claim 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<TrailVariant>,
    /// chain_forgery: explicit victims (default: the attacker's downstream neighbours).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victims: Option<Vec<u32>>,
    /// chain_forgery: whether the attacker can jam the genuine updates.
    #[serde(default = "yes")]
    pub jam: bool,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, nodes: &[u32]) -> Self {
        AttackSpec { kind, nodes: nodes.to_vec(), at_version: 1, delta: None, variant: None, victims: None, jam: true }
    }

    pub fn with_delta(mut self, d: u32) -> Self {
        self.delta = Some(d);
        self
    }

    pub fn with_variant(mut self, v: TrailVariant) -> Self {
        self.variant = Some(v);
        self
    }

    pub fn at(mut self, v: u32) -> Self {
        self.at_version = v;
        self
    }

    pub fn name(&self) -> String {
        match (self.kind, self.variant) {
            (AttackKind::TrailManipulation, Some(v)) => format!("trail_manipulation:{}", v.name()),
            (AttackKind::KChainReplay, _) => format!("k_chain_replay:{}", self.nodes.len()),
            (k, _) => serde_json::to_value(k).unwrap().as_str().unwrap().to_string(),
        }
    }
}

/// What a captured node does differently.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    /// Emits a higher version number without a valid chain element.
    VersionForger,
    /// Claims `max(0, true - delta)`; `None` claims 0.
    Spoofer { delta: Option<u32> },
    /// Advertises its preferred parent's rank and element downward.
    Replayer,
    /// Withholds updates `i, i+1`, then feeds victims a forged rank chain.
    Forger { victims: BTreeSet<NodeId> },
    /// Deviates while merging the convergecast array.
    Manipulator(TrailVariant),
    /// Upper end of a colluding chain: forwards tests unchecked and merges the
    /// colluding child's array one level up.
    Colluder { child: NodeId },
}

#[derive(Clone, Debug, Default)]
pub struct Adversary {
    pub spec: Option<AttackSpec>,
    pub roles: BTreeMap<NodeId, Vec<Role>>,
}

impl Adversary {
    pub fn none() -> Self {
        Adversary::default()
    }

    pub fn is_attacker(&self, n: NodeId) -> bool {
        self.roles.contains_key(&n)
    }

    pub fn attackers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles.keys().copied()
    }

    pub fn roles(&self, n: NodeId) -> &[Role] {
        self.roles.get(&n).map_or(&[], |v| v.as_slice())
    }

    pub fn has(&self, n: NodeId, f: impl Fn(&Role) -> bool) -> bool {
        self.roles(n).iter().any(f)
    }

    pub fn at_version(&self) -> u32 {
        self.spec.as_ref().map_or(u32::MAX, |s| s.at_version)
    }

    /// Expands a spec against a topology rooted at `root`.
    pub fn from_spec(spec: &AttackSpec, topo: &Topology, root: NodeId) -> Result<Self> {
        let ids: Vec<NodeId> = spec.nodes.iter().map(|&n| NodeId(n)).collect();
        if ids.is_empty() {
            return Err(Error::ConfigInvalid("attack needs at least one node".into()));
        }
        for &n in &ids {
            if !topo.contains(n) {
                return Err(Error::ConfigInvalid(format!("attacker {n} not in topology")));
            }
            if n == root {
                return Err(Error::ConfigInvalid("the root cannot be captured".into()));
            }
        }
        let dist = topo.hop_distances(root);
        let mut roles: BTreeMap<NodeId, Vec<Role>> = BTreeMap::new();
        let mut add = |n: NodeId, r: Role| roles.entry(n).or_default().push(r);
        match spec.kind {
            AttackKind::VersionAttack => ids.iter().for_each(|&n| add(n, Role::VersionForger)),
            AttackKind::RankSpoof => ids.iter().for_each(|&n| add(n, Role::Spoofer { delta: spec.delta })),
            AttackKind::RankReplay => ids.iter().for_each(|&n| add(n, Role::Replayer)),
            AttackKind::ChainForgery => {
                let m = ids[0];
                let victims: BTreeSet<NodeId> = match &spec.victims {
                    Some(v) => v.iter().map(|&x| NodeId(x)).collect(),
                    None => topo.neighbors(m).filter(|v| dist.get(v) > dist.get(&m)).collect(),
                };
                if victims.iter().any(|v| !topo.adjacent(m, *v)) {
                    return Err(Error::ConfigInvalid("forgery victims must be in the attacker's range".into()));
                }
                add(m, Role::Forger { victims });
            }
            AttackKind::TrailManipulation => {
                let v = spec
                    .variant
                    .ok_or_else(|| Error::ConfigInvalid("trail_manipulation needs a variant".into()))?;
                if v == TrailVariant::MergeOnBehalf {
                    if ids.len() != 2 {
                        return Err(Error::ConfigInvalid("merge_on_behalf needs [grandparent, spoofer]".into()));
                    }
                    add(ids[0], Role::Manipulator(v));
                    add(ids[1], Role::Replayer);
                } else {
                    ids.iter().for_each(|&n| add(n, Role::Manipulator(v)));
                }
            }
            AttackKind::KChainReplay => {
                if ids.len() < 2 {
                    return Err(Error::ConfigInvalid("k_chain_replay needs k >= 2 nodes".into()));
                }
                for w in ids.windows(2) {
                    if !topo.adjacent(w[0], w[1]) {
                        return Err(Error::ConfigInvalid("colluding chain must be directly connected".into()));
                    }
                    add(w[0], Role::Colluder { child: w[1] });
                    add(w[1], Role::Replayer);
                }
            }
        }
        Ok(Adversary { spec: Some(spec.clone()), roles })
    }
}

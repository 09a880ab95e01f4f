//! Scenario files, batch runs and the reports derived from their event logs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adversary::{Adversary, AttackKind, AttackSpec, TrailVariant};
use crate::bloom::BloomParams;
use crate::chains::Suite;
use crate::dodag::NodeId;
use crate::error::{Error, Result};
use crate::sim::LogEntry;
use crate::topology::TopologySpec;
use crate::world::{Scheme, TrailMode, World, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeName {
    #[serde(rename = "rpl")]
    Rpl,
    #[serde(rename = "vera")]
    Vera,
    #[serde(rename = "vera++")]
    VeraPlus,
    #[serde(rename = "trail-single")]
    TrailSingle,
    #[serde(rename = "trail")]
    Trail,
}

impl SchemeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeName::Rpl => "rpl",
            SchemeName::Vera => "vera",
            SchemeName::VeraPlus => "vera++",
            SchemeName::TrailSingle => "trail-single",
            SchemeName::Trail => "trail",
        }
    }

    fn formation(&self) -> Scheme {
        match self {
            SchemeName::Vera => Scheme::Vera,
            SchemeName::VeraPlus => Scheme::VeraPlus,
            _ => Scheme::Plain,
        }
    }

    fn trail_mode(&self) -> Option<TrailMode> {
        match self {
            SchemeName::TrailSingle => Some(TrailMode::Single),
            SchemeName::Trail => Some(TrailMode::Convergecast),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Succeeded,
    Blocked,
    Detected,
    BlindSpot,
    SelfExcluded,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Succeeded => "succeeded",
            Outcome::Blocked => "blocked",
            Outcome::Detected => "detected",
            Outcome::BlindSpot => "blind-spot",
            Outcome::SelfExcluded => "self-excluded",
        }
    }
}

fn default_versions() -> usize {
    3
}

fn default_l() -> u32 {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologySpec,
    #[serde(default)]
    pub root: u32,
    pub scheme: SchemeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "default_versions")]
    pub versions: usize,
    #[serde(default = "default_l")]
    pub l: u32,
    /// Defaults to `m = 6k` for k-ary trees and `m = 12` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloom: Option<BloomParams>,
    #[serde(default)]
    pub challenge_response: bool,
    #[serde(default)]
    pub suite: Suite,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Outcome>,
}

impl ScenarioConfig {
    pub fn new(topology: TopologySpec, scheme: SchemeName) -> Self {
        ScenarioConfig {
            topology,
            root: 0,
            scheme,
            attack: None,
            seed: 0,
            loss: 0.0,
            versions: default_versions(),
            l: default_l(),
            bloom: None,
            challenge_response: false,
            suite: Suite::default(),
            expect: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::ConfigInvalid(format!("loss {} outside [0, 1]", self.loss)));
        }
        if let Some(b) = self.bloom {
            if b.m == 0 || b.k_hash == 0 || b.k_hash > 4 * b.m {
                return Err(Error::ConfigInvalid(format!("bad bloom parameters {b:?}")));
            }
        }
        if let Some(a) = &self.attack {
            if a.kind == AttackKind::ChainForgery && (a.at_version as usize) + 1 > self.versions {
                return Err(Error::ConfigInvalid("chain_forgery needs versions i and i+1".into()));
            }
        }
        Ok(())
    }

    pub fn bloom_params(&self) -> BloomParams {
        self.bloom.unwrap_or(match &self.topology {
            TopologySpec::Kary { kary } => BloomParams::for_fanout(kary.k as usize),
            _ => BloomParams::for_fanout(2),
        })
    }

    fn world_config(&self) -> WorldConfig {
        WorldConfig {
            scheme: self.scheme.formation(),
            suite: self.suite,
            n: self.versions,
            l: self.l,
            bloom: self.bloom_params(),
            challenge_response: self.challenge_response,
            seed: self.seed,
            loss: self.loss,
            ..WorldConfig::default()
        }
    }
}

/// Builds the world and runs every phase; the log is left in the world.
fn execute(cfg: &ScenarioConfig, attack: Option<&AttackSpec>, prelude: &[(NodeId, &str, Value)]) -> Result<World> {
    let topo = cfg.topology.build()?;
    let root = NodeId(cfg.root);
    let adv = match attack {
        Some(a) => Adversary::from_spec(a, &topo, root)?,
        None => Adversary::none(),
    };
    let mut w = World::new(topo, root, cfg.world_config(), adv)?;
    w.sim.note(
        root,
        "scenario",
        json!({"scheme": cfg.scheme, "seed": cfg.seed, "expect": cfg.expect, "bloom_m": cfg.bloom_params().m})
            .to_string(),
    );
    for (n, kind, v) in prelude {
        w.sim.note(*n, kind, v.to_string());
    }
    for i in 1..=cfg.versions as u32 {
        w.run_version(i)?;
        w.emit_state_notes();
        if cfg.challenge_response {
            w.run_data_round()?;
            w.emit_state_notes();
        }
    }
    if let Some(mode) = cfg.scheme.trail_mode() {
        w.run_trail(mode)?;
    }
    Ok(w)
}

/// Runs a scenario; for TRAIL schemes an attack-free baseline with the same seed is
/// run first and its verdicts recorded in the log, so filter false positives that
/// occur without any attacker are not blamed on it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(RunReport, Vec<LogEntry>)> {
    cfg.validate()?;
    let mut prelude = Vec::new();
    if cfg.scheme.trail_mode().is_some() && cfg.attack.is_some() {
        let base = execute(cfg, None, &[])?;
        let root = NodeId(cfg.root);
        for e in base.log() {
            let tag = match e.kind.as_str() {
                "note:trail-verdict" => "baseline",
                "note:trail-violation" => "baseline-violation",
                _ => continue,
            };
            prelude.push((root, tag, json!({"node": e.from, "detail": detail(e)})));
        }
    }
    let w = execute(cfg, cfg.attack.as_ref(), &prelude)?;
    let log = w.into_log();
    let report = RunReport::from_log(&log)?;
    Ok((report, log))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: u64,
    pub bytes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scheme: Option<SchemeName>,
    pub seed: u64,
    pub attack: Option<String>,
    pub attackers: Vec<NodeId>,
    pub outcome: Option<Outcome>,
    pub expect: Option<Outcome>,
    /// The attack changed the topology the way it intended.
    pub effect: bool,
    pub sinkhole: bool,
    /// Honest nodes whose TRAIL check failed because of the attack.
    pub detected_by: Vec<NodeId>,
    pub adjudicated: Vec<NodeId>,
    pub trail_verdicts: BTreeMap<NodeId, Value>,
    pub messages: BTreeMap<String, KindStats>,
    pub trail_msgs_per_node: BTreeMap<NodeId, u64>,
    pub max_trail_msgs_per_node: u64,
    pub max_attestation_bytes: f64,
    pub mean_attestation_bytes: f64,
}

fn detail(e: &LogEntry) -> Value {
    e.detail.as_deref().and_then(|d| serde_json::from_str(d).ok()).unwrap_or(Value::Null)
}

fn failure_set(verdict_note: &Value) -> BTreeSet<String> {
    verdict_note["failures"].as_array().into_iter().flatten().map(|f| f.to_string()).collect()
}

fn node_of(v: &Value) -> Option<NodeId> {
    v.as_u64().map(|n| NodeId(n as u32))
}

impl RunReport {
    /// Everything here is recomputed from the log alone.
    pub fn from_log(log: &[LogEntry]) -> Result<Self> {
        let mut scheme = None;
        let mut seed = 0;
        let mut expect = None;
        let mut spec: Option<AttackSpec> = None;
        let mut attackers = BTreeSet::new();
        let mut messages: BTreeMap<String, KindStats> = BTreeMap::new();
        let mut trail_msgs: BTreeMap<NodeId, u64> = BTreeMap::new();
        let mut att_sizes = Vec::new();
        let mut baseline: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        let mut failures: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        let mut baseline_violations = BTreeSet::new();
        let mut verdicts: BTreeMap<NodeId, Value> = BTreeMap::new();
        let mut violations = BTreeSet::new();
        let mut adjudicated = BTreeSet::new();
        let mut effect_version = false;
        let mut root_latest = 0u64;
        let mut effect_rank = false;
        let mut sinkhole = false;
        let mut snapshot: BTreeMap<NodeId, Value> = BTreeMap::new();

        let mut judge_snapshot = |snap: &BTreeMap<NodeId, Value>, attackers: &BTreeSet<NodeId>| {
            let parent = |n: NodeId| snap.get(&n).and_then(|s| node_of(&s["parent"]));
            for (n, s) in snap {
                if attackers.contains(n) {
                    if let Some(h) = parent(*n) {
                        if parent(h) == Some(*n) && !attackers.contains(&h) {
                            sinkhole = true;
                        }
                    }
                    continue;
                }
                if let (Some(r), Some(b)) = (s["rank"].as_u64(), s["bfs"].as_u64()) {
                    if r < b {
                        effect_rank = true;
                    }
                }
            }
        };

        for e in log {
            if let Some(k) = e.kind.strip_prefix("tx:") {
                let s = messages.entry(k.to_string()).or_default();
                s.count += 1;
                s.bytes += e.bytes;
                if k.starts_with("trail:") {
                    *trail_msgs.entry(e.from).or_default() += 1;
                }
                if k == "trail:up" || k == "trail:down" {
                    att_sizes.push(e.bytes);
                }
                continue;
            }
            let Some(k) = e.kind.strip_prefix("note:") else { continue };
            if k != "state" && !snapshot.is_empty() {
                judge_snapshot(&snapshot, &attackers);
                snapshot.clear();
            }
            let d = detail(e);
            match k {
                "scenario" => {
                    scheme = serde_json::from_value(d["scheme"].clone()).ok();
                    seed = d["seed"].as_u64().unwrap_or(0);
                    expect = serde_json::from_value(d["expect"].clone()).ok().flatten();
                }
                "attack" => {
                    spec = serde_json::from_value(d["attack"].clone()).ok();
                    attackers = d["attackers"].as_array().into_iter().flatten().filter_map(node_of).collect();
                }
                "baseline" => {
                    if let Some(n) = node_of(&d["node"]) {
                        baseline.insert(n, failure_set(&d["detail"]));
                    }
                }
                "baseline-violation" => {
                    baseline_violations.insert(d.to_string());
                }
                "trail-verdict" if !attackers.contains(&e.from) => {
                    failures.insert(e.from, failure_set(&d));
                    verdicts.insert(e.from, d["verdict"].clone());
                }
                "trail-violation" if !attackers.contains(&e.from) => {
                    let key = json!({"node": e.from, "detail": d}).to_string();
                    violations.insert((e.from, key));
                }
                "verdict" => {
                    if let Some(n) = node_of(&d["verdict"]["Malicious"]["node"]) {
                        adjudicated.insert(n);
                    }
                }
                "version" => root_latest = root_latest.max(d["version"].as_u64().unwrap_or(0)),
                "adopt" if !attackers.contains(&e.from) => {
                    if d["version"].as_u64().unwrap_or(0) > root_latest {
                        effect_version = true;
                    }
                }
                "state" => {
                    if let Some(n) = node_of(&d["node"]) {
                        snapshot.insert(n, d);
                    }
                }
                _ => {}
            }
        }
        if !snapshot.is_empty() {
            judge_snapshot(&snapshot, &attackers);
        }

        // a check that fails under attack but passed in the attack-free run
        let empty = BTreeSet::new();
        let mut detected_by: BTreeSet<NodeId> = failures
            .iter()
            .filter(|(n, f)| f.difference(baseline.get(n).unwrap_or(&empty)).next().is_some())
            .map(|(n, _)| *n)
            .collect();
        detected_by.extend(violations.iter().filter(|(_, k)| !baseline_violations.contains(k)).map(|(n, _)| *n));

        let effect = match spec.as_ref().map(|s| s.kind) {
            Some(AttackKind::VersionAttack) => effect_version,
            _ => effect_rank,
        };
        let caught = adjudicated.iter().any(|n| attackers.contains(n)) || !detected_by.is_empty();
        let trail = matches!(scheme, Some(SchemeName::Trail | SchemeName::TrailSingle));
        let outcome = spec.as_ref().map(|s| {
            if caught {
                Outcome::Detected
            } else if trail && effect {
                Outcome::BlindSpot
            } else if effect {
                Outcome::Succeeded
            } else if s.variant == Some(TrailVariant::WithholdOwn) {
                Outcome::SelfExcluded
            } else {
                Outcome::Blocked
            }
        });
        let max_att = att_sizes.iter().copied().fold(0.0, f64::max);
        let mean_att = if att_sizes.is_empty() { 0.0 } else { att_sizes.iter().sum::<f64>() / att_sizes.len() as f64 };
        Ok(RunReport {
            scheme,
            seed,
            attack: spec.as_ref().map(|s| s.name()),
            attackers: attackers.into_iter().collect(),
            outcome,
            expect,
            effect,
            sinkhole,
            detected_by: detected_by.into_iter().collect(),
            adjudicated: adjudicated.into_iter().collect(),
            trail_verdicts: verdicts,
            max_trail_msgs_per_node: trail_msgs.values().copied().max().unwrap_or(0),
            trail_msgs_per_node: trail_msgs,
            messages,
            max_attestation_bytes: max_att,
            mean_attestation_bytes: mean_att,
        })
    }

    /// `None` when the scenario states no expectation.
    pub fn expectation_met(&self) -> Option<bool> {
        self.expect.map(|e| Some(e) == self.outcome)
    }
}

//! Batch runs behind the CLI: the overhead table and the attack matrix.

use std::io::Write;

use serde::Serialize;

use crate::adversary::{AttackKind, AttackSpec, TrailVariant};
use crate::bloom::BloomParams;
use crate::chains::Suite;
use crate::error::Result;
use crate::scenario::{run_scenario, Outcome, RunReport, ScenarioConfig, SchemeName};
use crate::topology::{KaryParams, TopologySpec};
use crate::trail::predicted_sizes;

/// Seed used by every canonical cell.
pub const MATRIX_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadRow {
    pub k: u64,
    pub h: u32,
    pub nodes: u64,
    pub msgs_per_node: u64,
    pub sim_max_bytes: f64,
    pub predicted_max_bytes: f64,
    pub sim_mean_bytes: f64,
    pub paper_avg_bytes: f64,
}

pub fn kary(k: u32, h: u32) -> TopologySpec {
    TopologySpec::Kary { kary: KaryParams { k, h } }
}

/// One attack-free convergecast per `(k, h)` on a balanced tree with `m = 6k`.
pub fn overhead_table(ks: &[u32], hs: &[u32]) -> Result<Vec<OverheadRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        for &h in hs {
            let predicted = predicted_sizes(k as u64, h)?;
            let mut cfg = ScenarioConfig::new(kary(k, h), SchemeName::Trail);
            cfg.versions = 1;
            cfg.suite = Suite::Test;
            cfg.bloom = Some(BloomParams::for_fanout(k as usize));
            let (rep, _) = run_scenario(&cfg)?;
            rows.push(OverheadRow {
                k: k as u64,
                h,
                nodes: predicted.nodes,
                msgs_per_node: rep.max_trail_msgs_per_node,
                sim_max_bytes: rep.max_attestation_bytes,
                predicted_max_bytes: predicted.max_bytes,
                sim_mean_bytes: rep.mean_attestation_bytes,
                paper_avg_bytes: predicted.paper_avg_bytes,
            });
        }
    }
    Ok(rows)
}

/// One row of the attack matrix: a canonical scenario and what it should produce.
#[derive(Clone, Debug)]
pub struct MatrixCell {
    pub config: ScenarioConfig,
    pub expected: Outcome,
    /// The plain rank spoof must also produce a sinkhole.
    pub expect_sinkhole: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    pub scheme: String,
    pub attack: String,
    pub nodes: String,
    pub challenge_response: bool,
    pub outcome: String,
    pub expected: String,
    pub sinkhole: bool,
    pub matches: bool,
}

fn cell(scheme: SchemeName, spec: AttackSpec, expected: Outcome) -> MatrixCell {
    let mut config = ScenarioConfig::new(kary(2, 4), scheme);
    config.seed = MATRIX_SEED;
    config.attack = Some(spec);
    config.expect = Some(expected);
    MatrixCell { config, expected, expect_sinkhole: false }
}

/// The canonical scenarios, all on a binary tree of height 4 rooted at node 0.
pub fn canonical_cells() -> Vec<MatrixCell> {
    use AttackKind::*;
    use Outcome::*;
    use SchemeName::*;
    let mut cells = vec![
        cell(Rpl, AttackSpec::new(VersionAttack, &[7]), Succeeded),
        cell(Vera, AttackSpec::new(VersionAttack, &[7]), Blocked),
        MatrixCell { expect_sinkhole: true, ..cell(Rpl, AttackSpec::new(RankSpoof, &[7]), Succeeded) },
        cell(Vera, AttackSpec::new(RankSpoof, &[7]), Blocked),
        cell(Vera, AttackSpec::new(RankSpoof, &[7]).with_delta(1), Blocked),
        cell(Vera, AttackSpec::new(ChainForgery, &[3]), Succeeded),
        cell(VeraPlus, AttackSpec::new(ChainForgery, &[3]), Blocked),
    ];
    for scheme in [Vera, VeraPlus] {
        cells.push(cell(scheme, AttackSpec::new(RankReplay, &[7]), Succeeded));
        let mut c = cell(scheme, AttackSpec::new(RankReplay, &[7]), Detected);
        c.config.challenge_response = true;
        cells.push(c);
    }
    cells.push(cell(Trail, AttackSpec::new(RankSpoof, &[7]).with_delta(1), Detected));
    for v in TrailVariant::ALL {
        let nodes: &[u32] = if v == TrailVariant::MergeOnBehalf { &[1, 7] } else { &[3] };
        let expected = if v == TrailVariant::WithholdOwn { SelfExcluded } else { Detected };
        cells.push(cell(Trail, AttackSpec::new(TrailManipulation, nodes).with_variant(v), expected));
    }
    cells.push(cell(Trail, AttackSpec::new(KChainReplay, &[3, 7]), BlindSpot));
    cells.push(cell(TrailSingle, AttackSpec::new(RankSpoof, &[7]).with_delta(1), Detected));
    cells.push(cell(TrailSingle, AttackSpec::new(KChainReplay, &[3, 7]), BlindSpot));
    for c in &mut cells {
        if c.config.attack.as_ref().is_some_and(|a| a.kind == ChainForgery) {
            c.config.suite = Suite::Production;
        }
    }
    cells
}

pub fn run_cell(c: &MatrixCell) -> Result<(MatrixRow, RunReport)> {
    let (rep, _) = run_scenario(&c.config)?;
    let spec = c.config.attack.as_ref().expect("matrix cells carry an attack");
    let outcome = rep.outcome.expect("attack present");
    let row = MatrixRow {
        scheme: c.config.scheme.as_str().to_string(),
        attack: spec.name(),
        nodes: spec.nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
        challenge_response: c.config.challenge_response,
        outcome: outcome.as_str().to_string(),
        expected: c.expected.as_str().to_string(),
        sinkhole: rep.sinkhole,
        matches: outcome == c.expected && (!c.expect_sinkhole || rep.sinkhole),
    };
    Ok((row, rep))
}

pub fn attack_matrix() -> Result<Vec<MatrixRow>> {
    canonical_cells().iter().map(|c| run_cell(c).map(|r| r.0)).collect()
}

pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, KeyInit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use trailsim::adversary::{AttackKind, AttackSpec, TrailVariant};
use trailsim::bloom::{BloomFilter, BloomParams};
use trailsim::chains::{ChainElement, ChainSet, RootSigner, Suite};
use trailsim::harness::{attack_matrix, kary, overhead_table};
use trailsim::scenario::{run_scenario, Outcome, RunReport, ScenarioConfig, SchemeName};
use trailsim::sim::{read_jsonl, write_jsonl, LogEntry};
use trailsim::topology::{DiskParams, TopologySpec};
use trailsim::vera::{vera_verify_parent_rank, vera_verify_version, VeraInitMsg, VeraNodeStore, VeraUpdateMsg};
use trailsim::verapp::{verapp_verify_parent_rank, verapp_verify_version, VeraPlusInitMsg, VeraPlusStore, VeraPlusUpdateMsg};

type Check = (bool, String);

// ---- independent primitives for the oracles ----

fn sha16(b: &[u8]) -> Vec<u8> {
    Sha256::digest(b)[..16].to_vec()
}

fn sha_iter(x: &[u8], t: usize) -> Vec<u8> {
    (0..t).fold(x.to_vec(), |acc, _| sha16(&acc))
}

fn aes_dec(key: &[u8], ct: &[u8]) -> Vec<u8> {
    let c = aes::Aes128::new(GenericArray::from_slice(key));
    let mut b = GenericArray::clone_from_slice(ct);
    c.decrypt_block(&mut b);
    b.to_vec()
}

fn test_iter(x: u64, t: usize) -> u64 {
    x.wrapping_add(t as u64)
}

fn sig3(x: f64) -> String {
    format!("{:.3e}", x)
}

// ---- criteria ----

const TABLE_MAX: [f64; 6] = [10.5, 22.5, 46.5, 63.0, 255.0, 1023.0];
const TABLE_NODES: [u64; 6] = [15, 31, 63, 85, 341, 1365];
const TABLE_AVG: [f64; 6] = [3.5, 7.5, 15.5, 12.6, 51.0, 204.6];

fn criterion_1_and_2() -> (Check, Check) {
    let t0 = Instant::now();
    let rows = overhead_table(&[2, 4], &[3, 4, 5]).expect("table runs");
    let secs = t0.elapsed().as_secs_f64();
    let mut ok1 = secs < 10.0 && rows.len() == 6;
    let mut ok2 = rows.len() == 6;
    let mut avg_detail = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        // root array holds 1 + k + ... + k^(h-1) slices of 6k bits each
        let slices: u64 = (0..r.h).map(|e| r.k.pow(e)).sum();
        let oracle = (slices * 6 * r.k) as f64 / 8.0;
        ok1 &= r.sim_max_bytes == oracle
            && r.predicted_max_bytes == oracle
            && r.sim_max_bytes == TABLE_MAX[i]
            && r.nodes == TABLE_NODES[i];
        ok2 &= sig3(r.paper_avg_bytes) == sig3(TABLE_AVG[i]) && sig3(r.sim_max_bytes / (r.k as f64 + 1.0)) == sig3(TABLE_AVG[i]);
        avg_detail.push(format!("{}/{:.1}", r.paper_avg_bytes, r.sim_mean_bytes));
    }
    let max: Vec<String> = rows.iter().map(|r| format!("{}", r.sim_max_bytes)).collect();
    (
        (ok1, format!("max bytes [{}], {:.2}s", max.join(", "), secs)),
        (ok2, format!("table avg/simulated mean [{}]", avg_detail.join(", "))),
    )
}

fn trail_tx_per_node(log: &[LogEntry]) -> BTreeMap<u32, u64> {
    let mut m = BTreeMap::new();
    for e in log.iter().filter(|e| e.kind.starts_with("tx:trail:")) {
        *m.entry(e.from.0).or_insert(0) += 1;
    }
    m
}

fn criterion_3() -> Check {
    let mut worst = 0;
    let mut runs = 0;
    for k in 2..=4u32 {
        for h in 1..=4u32 {
            let mut cfg = ScenarioConfig::new(kary(k, h), SchemeName::Trail);
            cfg.versions = 1;
            cfg.seed = (k * 10 + h) as u64;
            cfg.suite = Suite::Test;
            let (_, log) = run_scenario(&cfg).expect("runs");
            worst = worst.max(trail_tx_per_node(&log).values().copied().max().unwrap_or(0));
            runs += 1;
        }
    }
    (worst <= 2, format!("max {worst} TRAIL messages per node over {runs} balanced trees"))
}

fn criterion_4() -> Check {
    let want: &[(&str, &str, bool, &str)] = &[
        ("rpl", "version_attack", false, "succeeded"),
        ("vera", "version_attack", false, "blocked"),
        ("rpl", "rank_spoof", false, "succeeded"),
        ("vera", "rank_spoof", false, "blocked"),
        ("vera", "rank_spoof", false, "blocked"),
        ("vera", "chain_forgery", false, "succeeded"),
        ("vera++", "chain_forgery", false, "blocked"),
        ("vera", "rank_replay", false, "succeeded"),
        ("vera", "rank_replay", true, "detected"),
        ("vera++", "rank_replay", false, "succeeded"),
        ("vera++", "rank_replay", true, "detected"),
        ("trail", "rank_spoof", false, "detected"),
        ("trail", "trail_manipulation:drop_children", false, "detected"),
        ("trail", "trail_manipulation:misplace", false, "detected"),
        ("trail", "trail_manipulation:rearrange", false, "detected"),
        ("trail", "trail_manipulation:withhold_own", false, "self-excluded"),
        ("trail", "trail_manipulation:merge_on_behalf", false, "detected"),
        ("trail", "trail_manipulation:delete_nonces", false, "detected"),
        ("trail", "k_chain_replay:2", false, "blind-spot"),
        ("trail-single", "rank_spoof", false, "detected"),
        ("trail-single", "k_chain_replay:2", false, "blind-spot"),
    ];
    let rows = attack_matrix().expect("matrix runs");
    let again = attack_matrix().expect("matrix runs");
    let mut bad = Vec::new();
    if rows.len() != want.len() {
        bad.push(format!("{} rows, want {}", rows.len(), want.len()));
    }
    for (r, w) in rows.iter().zip(want) {
        let got = (r.scheme.as_str(), r.attack.as_str(), r.challenge_response, r.outcome.as_str());
        if got != *w {
            bad.push(format!("{got:?}"));
        }
        if r.scheme == "rpl" && r.attack == "rank_spoof" && !r.sinkhole {
            bad.push("plain rank_spoof without sinkhole".into());
        }
    }
    if rows != again {
        bad.push("not deterministic".into());
    }
    (bad.is_empty(), if bad.is_empty() { format!("{} cells match", rows.len()) } else { bad.join("; ") })
}

fn chains_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, l) = (6usize, 64usize);
    let p = ChainSet::generate(Suite::Production, n, l, &mut rng);
    let b = |e: &ChainElement| e.as_bytes().to_vec();
    let mut ok = (0..=n).all(|i| b(&p.v(i)) == sha_iter(&b(&p.version_seed), n + 1 - i));
    ok &= (1..=n).all(|i| b(&p.tail(i)) == sha_iter(&b(&p.x(i)), l + 1));
    ok &= (1..=n).all(|i| (0..=l).all(|j| b(&p.rank_element(i, j)) == sha_iter(&b(&p.x(i)), j + 1)));
    // c_n = R_{n,l}; dec_{c_{i+1}}(c_i) = R_{i,l}
    ok &= b(&p.cipher(n)) == b(&p.tail(n));
    ok &= (1..n).all(|i| aes_dec(&b(&p.cipher(i + 1)), &b(&p.cipher(i))) == b(&p.tail(i)));
    let t = ChainSet::generate(Suite::Test, n, l, &mut rng);
    ok &= (1..=n).all(|i| t.tail(i).low_u64() == test_iter(t.x(i).low_u64(), l + 1));
    ok &= (1..n).all(|i| t.cipher(i).low_u64() == t.cipher(i + 1).low_u64() ^ t.tail(i).low_u64());
    (ok, "chain algebra vs raw SHA-256/AES".into())
}

fn bloom_props() -> Check {
    let p = BloomParams::for_fanout(2);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut false_neg = 0;
    for _ in 0..2000 {
        let xs: Vec<u64> = (0..rng.gen_range(1..8)).map(|_| rng.gen()).collect();
        let mut f = BloomFilter::new(p);
        xs.iter().for_each(|x| f.insert(*x));
        false_neg += xs.iter().filter(|x| !f.query(**x)).count();
    }
    let trials = 100_000;
    let mut fp = 0;
    for _ in 0..trials {
        let mut f = BloomFilter::new(p);
        f.insert(rng.gen());
        f.insert(rng.gen());
        fp += f.query(rng.gen()) as u32;
    }
    let measured = fp as f64 / trials as f64;
    let (m, k, n) = (p.m as f64, p.k_hash as i32, 2.0);
    let analytic = (1.0 - (1.0 - 1.0 / m).powf(k as f64 * n)).powi(k);
    let ok = false_neg == 0 && (measured - analytic).abs() <= 0.02;
    (ok, format!("0 false negatives wanted (got {false_neg}), FPR m=12 n=2 measured {measured:.4} analytic {analytic:.4}"))
}

fn vera_brute_force() -> Check {
    let l = 8usize;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let chains = ChainSet::generate(Suite::Production, 2, l, &mut rng);
    let signer = RootSigner::generate(Suite::Production, &mut rng);
    let init = VeraInitMsg::create(&chains, &signer, 0);
    let mut store = VeraNodeStore::from_init(&init, &signer.verifier(), Suite::Production, l as u32).unwrap();
    vera_verify_version(&mut store, &VeraUpdateMsg::root_update(&chains, 0, 1)).unwrap();
    let tail = chains.tail(1).as_bytes().to_vec();
    let mut pairs = 0;
    let mut ok = true;
    for j in 0..=l {
        let held = chains.rank_element(1, j);
        for claim in 0..=l {
            let got = vera_verify_parent_rank(&store, claim as u32, &held).is_ok();
            let oracle = sha_iter(held.as_bytes(), l - claim) == tail;
            ok &= got == oracle && oracle == (claim == j);
            pairs += 1;
        }
    }
    (ok, format!("{pairs} (j, j') pairs at l=8"))
}

fn verapp_pbs_sampling() -> Check {
    let (n, l) = (4usize, 16u32);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let chains = ChainSet::generate(Suite::Production, n, l as usize, &mut rng);
    let signer = RootSigner::generate(Suite::Production, &mut rng);
    let init = VeraPlusInitMsg::create(&chains, &signer, 0);
    let fresh = VeraPlusStore::from_init(&init, &signer.verifier(), Suite::Production, l).unwrap();
    let mut accepted = 0;
    let attempts = 10_000;
    for a in 0..attempts {
        // the attacker knows everything of version i and forges version i+1
        let i = 1 + a % (n - 1);
        let mut store = fresh.clone();
        for v in 1..=i {
            let u = VeraPlusUpdateMsg::root_update(&chains, 0, v);
            verapp_verify_version(&mut store, &u).unwrap();
            verapp_verify_parent_rank(&mut store, 1, &chains.rank_element(v, 1), &u.cipher).unwrap();
        }
        let genuine = VeraPlusUpdateMsg::root_update(&chains, 0, i + 1);
        verapp_verify_version(&mut store, &genuine).unwrap();
        let x_forged = Suite::Production.random_element(&mut rng);
        let claim = rng.gen_range(0..=l);
        let elem = trailsim::chains::hash_forward(&Suite::Production, &x_forged, claim as u64 + 1);
        let cipher = Suite::Production.random_element(&mut rng);
        if verapp_verify_parent_rank(&mut store, claim, &elem, &cipher).is_ok() {
            accepted += 1;
        }
    }
    (accepted == 0, format!("{accepted} of {attempts} forged chains accepted"))
}

fn disk_config(i: u64, m: Option<usize>) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let n = rng.gen_range(8..=64);
    let radius = rng.gen_range(0.25..0.45);
    let mut cfg =
        ScenarioConfig::new(TopologySpec::Disk { disk: DiskParams { n, radius, seed: i } }, SchemeName::Trail);
    cfg.seed = i;
    cfg.versions = 1;
    cfg.suite = Suite::Test;
    cfg.bloom = m.map(|m| BloomParams { m, k_hash: 4 });
    cfg
}

fn hard_failure(v: &serde_json::Value) -> bool {
    v.get("Failed").is_some_and(|f| f.as_str() != Some("NonceDuplicated"))
}

fn trail_completeness() -> Check {
    let topologies = 50;
    let mut unverified = 0;
    let mut hard = 0;
    let mut checked = 0;
    for i in 0..topologies {
        let (rep, log) = run_scenario(&disk_config(i, Some(4096))).unwrap();
        let ranked: BTreeSet<u32> = ranked_nodes(&log);
        checked += ranked.len();
        unverified += ranked
            .iter()
            .filter(|n| !rep.trail_verdicts.get(&trailsim::dodag::NodeId(**n)).is_some_and(|v| v.get("Verified").is_some()))
            .count();
        let (rep, _) = run_scenario(&disk_config(i, None)).unwrap();
        hard += rep.trail_verdicts.values().filter(|v| hard_failure(v)).count();
    }
    (
        unverified == 0 && hard == 0,
        format!("{topologies} topologies, {checked} nodes: {unverified} unverified at m=4096, {hard} hard failures at m=12"),
    )
}

fn ranked_nodes(log: &[LogEntry]) -> BTreeSet<u32> {
    log.iter()
        .filter(|e| e.kind == "note:state")
        .filter_map(|e| serde_json::from_str::<serde_json::Value>(e.detail.as_deref()?).ok())
        .filter(|d| d["rank"].as_u64().is_some_and(|r| r > 0))
        .filter_map(|d| d["node"].as_u64().map(|n| n as u32))
        .collect()
}

fn jsonl(log: &[LogEntry]) -> Vec<u8> {
    let mut b = Vec::new();
    write_jsonl(&mut b, log).unwrap();
    b
}

fn determinism() -> Check {
    let mut ok = true;
    let mut cells = 0;
    for c in trailsim::harness::canonical_cells().into_iter().step_by(3) {
        let (r1, l1) = run_scenario(&c.config).unwrap();
        let (r2, l2) = run_scenario(&c.config).unwrap();
        let (b1, b2) = (jsonl(&l1), jsonl(&l2));
        ok &= Sha256::digest(&b1) == Sha256::digest(&b2) && r1 == r2;
        let reread = read_jsonl(std::str::from_utf8(&b1).unwrap()).unwrap();
        let r3 = RunReport::from_log(&reread).unwrap();
        ok &= serde_json::to_string(&r3).unwrap() == serde_json::to_string(&r1).unwrap();
        cells += 1;
    }
    let mut lossy = disk_config(3, None);
    lossy.loss = 0.3;
    let (_, a) = run_scenario(&lossy).unwrap();
    let (_, b) = run_scenario(&lossy).unwrap();
    ok &= jsonl(&a) == jsonl(&b);
    (ok, format!("{cells} scenarios + 1 lossy run: identical log hashes and log-derived reports"))
}

fn detection_frequency() -> Check {
    let trials = 200u64;
    // measured FPR of one m = 12 slice holding two nonces
    let p = BloomParams::for_fanout(2);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let fp = (0..100_000)
        .filter(|_| {
            let mut f = BloomFilter::new(p);
            f.insert(rng.gen());
            f.insert(rng.gen());
            f.query(rng.gen())
        })
        .count();
    let fpr = fp as f64 / 100_000.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for v in TrailVariant::ALL {
        let nodes: &[u32] = if v == TrailVariant::MergeOnBehalf { &[1, 7] } else { &[3] };
        let mut detected = 0;
        let mut honest_failures = 0;
        for s in 0..trials {
            let mut cfg = ScenarioConfig::new(kary(2, 4), SchemeName::Trail);
            cfg.seed = s;
            cfg.versions = 1;
            cfg.suite = Suite::Test;
            cfg.attack = Some(AttackSpec::new(AttackKind::TrailManipulation, nodes).with_variant(v));
            let (rep, _) = run_scenario(&cfg).unwrap();
            detected += (rep.outcome == Some(Outcome::Detected)) as u32;
            honest_failures += rep.detected_by.len();
        }
        let freq = detected as f64 / trials as f64;
        if v == TrailVariant::WithholdOwn {
            ok &= honest_failures == 0;
            parts.push(format!("{}: {honest_failures} honest failures", v.name()));
        } else {
            ok &= freq >= 1.0 - fpr;
            parts.push(format!("{}: {freq:.3}", v.name()));
        }
    }
    (ok, format!("1-f = {:.3}; {}", 1.0 - fpr, parts.join(", ")))
}

fn line(id: &str, c: &Check) -> bool {
    println!("criterion {id}: {} ({})", if c.0 { "PASS" } else { "FAIL" }, c.1);
    c.0
}

fn main() {
    let mut all = true;
    let (c1, c2) = criterion_1_and_2();
    all &= line("1 overhead table max column", &c1);
    all &= line("2 average column = max/(k+1)", &c2);
    all &= line("3 per-node TRAIL message bound", &criterion_3());
    all &= line("4 attack matrix", &criterion_4());
    let subs = [
        ("5a chain invariants", chains_invariants()),
        ("5b bloom no false negatives, FPR band", bloom_props()),
        ("5c VeRA brute force l=8", vera_brute_force()),
        ("5d VeRA++ forgery sampling", verapp_pbs_sampling()),
        ("5e TRAIL completeness", trail_completeness()),
        ("5f determinism", determinism()),
        ("5g manipulation detection frequency", detection_frequency()),
    ];
    let mut five = true;
    for (id, c) in &subs {
        five &= line(id, c);
    }
    all &= line("5 property suites", &(five, format!("{} sub-checks", subs.len())));
    if !all {
        std::process::exit(1);
    }
}

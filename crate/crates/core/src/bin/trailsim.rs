use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trailsim::chains::{ChainSet, Suite};
use trailsim::harness::{attack_matrix, overhead_table, write_csv};
use trailsim::scenario::{run_scenario, ScenarioConfig};
use trailsim::sim::write_jsonl;
use trailsim::Error;

const EXIT_DIVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "trailsim", version, about = "Rank and version authentication simulator for RPL DODAGs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and print its report as JSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write the event log as JSONL.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Attestation sizes on balanced trees, simulated and closed-form.
    Table {
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4])]
        k: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [3, 4, 5])]
        h: Vec<u32>,
        #[arg(long, value_enum, default_value = "csv")]
        out: Format,
    },
    /// Outcome of every canonical attack against every scheme.
    AttackMatrix {
        #[arg(long, value_enum, default_value = "csv")]
        out: Format,
    },
    /// Hash-chain utilities.
    Chains {
        #[command(subcommand)]
        cmd: ChainsCmd,
    },
}

#[derive(Subcommand)]
enum ChainsCmd {
    /// Build chains with both suites and check their defining relations.
    Selftest,
}

fn emit<T: serde::Serialize>(rows: &[T], out: Format) -> trailsim::Result<()> {
    let stdout = io::stdout().lock();
    match out {
        Format::Csv => write_csv(stdout, rows),
        Format::Json => {
            let mut w = stdout;
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

fn load_config(path: &PathBuf) -> trailsim::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    if let Ok(s) = std::env::var("SEED") {
        cfg.seed = s.trim().parse().map_err(|_| Error::ConfigInvalid(format!("SEED={s} is not an integer")))?;
    }
    Ok(cfg)
}

fn simulate(config: PathBuf, log: Option<PathBuf>) -> trailsim::Result<u8> {
    let cfg = load_config(&config)?;
    let (report, events) = run_scenario(&cfg)?;
    if let Some(p) = log {
        write_jsonl(BufWriter::new(File::create(p)?), &events)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.expectation_met() == Some(false) { EXIT_DIVERGED } else { 0 })
}

fn selftest() -> u8 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ok = true;
    for suite in [Suite::Test, Suite::Production] {
        let r = ChainSet::generate(suite, 8, 64, &mut rng).check_invariants();
        for (name, pass) in [("version_chain", r.version_chain), ("rank_tails", r.rank_tails), ("encryption_chain", r.encryption_chain)] {
            println!("{:<10} {name:<17} {}", format!("{suite:?}").to_lowercase(), if pass { "PASS" } else { "FAIL" });
            ok &= pass;
        }
    }
    if ok { 0 } else { 1 }
}

fn run(cli: Cli) -> trailsim::Result<u8> {
    match cli.cmd {
        Cmd::Simulate { config, log } => simulate(config, log),
        Cmd::Table { k, h, out } => {
            emit(&overhead_table(&k, &h)?, out)?;
            Ok(0)
        }
        Cmd::AttackMatrix { out } => {
            let rows = attack_matrix()?;
            emit(&rows, out)?;
            Ok(if rows.iter().all(|r| r.matches) { 0 } else { EXIT_DIVERGED })
        }
        Cmd::Chains { cmd: ChainsCmd::Selftest } => Ok(selftest()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e @ Error::ConfigInvalid(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

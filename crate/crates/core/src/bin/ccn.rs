use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ccn::canonical;
use ccn::harness::{self, ControlMode, LedgerBenchConfig, ScenarioConfig};
use ccn::ledger::{journal, verify_blocks, Validation};

#[derive(Parser)]
#[command(name = "ccn", about = "Run consent scenarios, adversary probes and benchmarks in process")]
struct Cli {
    /// Scenario configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the ledger journal and portal store.
    #[arg(long, global = true)]
    storage: Option<PathBuf>,
    /// Print the report as JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Also write benchmark rows as CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every participant joins every project.
    RunFlow,
    /// Establish consents, then revoke and update some of them.
    RevokeFlow,
    /// Honest-but-curious probes against unlinkability.
    Adversary {
        #[arg(value_enum)]
        probe: Probe,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Colluding organizations see a reused private DID.
        #[arg(long)]
        negative_control: bool,
    },
    /// Tampered packages and both denial procedures.
    Nonrep {
        #[arg(long, default_value_t = 100)]
        tampered: usize,
    },
    /// Forget consents, then scan every persisted store.
    Rtbf,
    /// Replayed and expired login tokens.
    Auth {
        #[arg(long, default_value_t = 1000)]
        attempts: usize,
    },
    /// Ledger, wallet or end-to-end latency and throughput.
    Bench {
        #[arg(value_enum)]
        target: BenchTarget,
        /// Ledger: transactions per stress round instead of the full
        /// three-round schedule.
        #[arg(long)]
        stress_n: Option<usize>,
        #[arg(long, default_value_t = 30)]
        iterations: usize,
    },
    /// Check or summarize a ledger journal file.
    Ledger {
        #[arg(value_enum)]
        action: LedgerAction,
        journal: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    Link,
    Portal,
    Mediator,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchTarget {
    Ledger,
    Wallet,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum LedgerAction {
    Verify,
    Inspect,
}

fn emit<T: Serialize + std::fmt::Debug>(json: bool, report: &T) {
    if json {
        println!("{}", canonical::to_string_pretty(report));
    } else {
        println!("{report:#?}");
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut config = match &cli.config {
        Some(path) => ScenarioConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.storage.is_some() {
        config.storage_dir = cli.storage.clone();
    }
    if let Some(dir) = &config.storage_dir {
        std::fs::create_dir_all(dir)?;
    }
    let csv = |text: String| -> std::io::Result<()> {
        match &cli.csv {
            Some(path) => std::fs::write(path, text),
            None => Ok(()),
        }
    };

    match cli.command {
        Command::RunFlow => {
            let (_, report) = harness::run_consent_flow(&config)?;
            if cli.json {
                emit(true, &report);
            } else {
                println!("accepted         {}/{}", report.accepted, report.pairs_attempted);
                println!("terms records    {}", report.terms_records);
                println!("valid proofs     {}", report.valid_proofs);
                println!("ledger height    {}", report.ledger_height);
                println!("state consistent {}", report.state_consistent);
                println!("elapsed          {:.0} ms", report.elapsed_ms);
                for f in &report.failures {
                    println!("failed pair      participant {} project {}: {}", f.participant, f.project, f.error);
                }
            }
            if !report.all_accepted() || !report.state_consistent {
                return Err("consent flow incomplete".into());
            }
        }
        Command::RevokeFlow => emit(cli.json, &harness::run_revocation_flow(&config)?.1),
        Command::Adversary { probe: Probe::Link, trials, negative_control } => {
            let mode = if negative_control { ControlMode::ReusePrivateDid } else { ControlMode::Honest };
            emit(cli.json, &harness::adversary_link_projects(&config, trials, mode)?);
        }
        Command::Adversary { probe: Probe::Portal, trials, .. } => emit(cli.json, &harness::adversary_portal(&config, trials)?),
        Command::Adversary { probe: Probe::Mediator, .. } => emit(cli.json, &harness::adversary_mediator(&config)?),
        Command::Nonrep { tampered } => emit(cli.json, &harness::non_repudiation_suite(&config, tampered)?),
        Command::Rtbf => emit(cli.json, &harness::rtbf_suite(&config)?),
        Command::Auth { attempts } => emit(cli.json, &harness::auth_hygiene_suite(&config, attempts, attempts)?),
        Command::Bench { target: BenchTarget::Ledger, stress_n, .. } => {
            let mut bench = match stress_n {
                Some(n) => LedgerBenchConfig::stress(n, 3),
                None => LedgerBenchConfig::full(),
            };
            bench.seed = config.seed;
            bench.batch_size = config.ledger.batch_size;
            bench.batch_timeout_ms = config.ledger.batch_timeout_ms;
            let report = harness::bench_ledger(&bench)?;
            csv(report.to_csv())?;
            if cli.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Bench { target: BenchTarget::Wallet, .. } => {
            let report = harness::bench_wallet(3, 10, 10, config.seed)?;
            csv(report.to_csv())?;
            if cli.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Bench { target: BenchTarget::E2e, iterations, .. } => {
            let report = harness::e2e_lifecycle(iterations, config.seed)?;
            if cli.json {
                println!("{}", canonical::to_string_pretty(&report));
            } else {
                for op in &report.ops {
                    println!("{:<26} {:>10.3} ms", op.function, op.median_ms);
                }
                println!("{:<26} {:>10.3} ms", "median total", report.median_total_ms);
                println!("{:<26} {:>10.3} ms", "worst iteration", report.worst_iteration_ms);
                println!("{:<26} {:>10.3} ms", "preseeded total", report.preseeded_total_ms);
            }
        }
        Command::Ledger { action, journal: path } => {
            let blocks = journal::read_journal(&path)?;
            verify_blocks(&blocks)?;
            match action {
                LedgerAction::Verify => {
                    let head = blocks.last().map(|b| b.block_digest.to_hex()).unwrap_or_default();
                    println!("ok: {} blocks, head {head}", blocks.len());
                }
                LedgerAction::Inspect if cli.json => println!("{}", canonical::to_string_pretty(&blocks)),
                LedgerAction::Inspect => {
                    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
                    for tx in blocks.iter().flat_map(|b| &b.txs) {
                        let outcome = match tx.validation {
                            Validation::Valid => "valid",
                            Validation::MvccConflict { .. } => "mvcc_conflict",
                            Validation::Rejected { .. } => "rejected",
                        };
                        *counts.entry((tx.tx.payload.operation.name(), outcome)).or_default() += 1;
                    }
                    println!("{} blocks", blocks.len());
                    for ((op, outcome), n) in counts {
                        println!("{op:<24} {outcome:<14} {n}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ccn: {e}");
            ExitCode::FAILURE
        }
    }
}

//! In-process deployments, scenario runners, adversary probes and
//! benchmarks.
//!
//! A [`World`] wires every actor together with seeded randomness. With
//! `concurrent` off it runs on one logical thread with a ticking manual
//! clock and an immediate orderer, so the same seed reproduces the same
//! transcripts and ledger journal byte for byte.

mod adversary;
mod bench;
mod flows;
mod report;
mod stats;
mod suites;
mod transcript;
mod world;

pub use adversary::{adversary_link_projects, adversary_mediator, adversary_portal, LinkageResult, MediatorProbe, PortalProbe};
pub use bench::{bench_ledger, bench_wallet, duplicate_revoke_probe, e2e_lifecycle, BenchRound, DuplicateRevokeReport, E2eReport, LedgerBenchConfig};
pub use flows::{run_consent_flow, run_revocation_flow, FlowReport, PairFailure, RevocationReport};
pub use report::{BenchReport, BenchRow, Environment, WalletBenchReport, WalletBenchRow};
pub use stats::{binomial_interval, Summary};
pub use suites::{auth_hygiene_suite, non_repudiation_suite, rtbf_suite, AuthHygieneReport, NonRepudiationReport, RtbfReport};
pub use transcript::{Event, EventKind, Transcript, TranscriptBook};
pub use world::{ControlMode, OrgActor, PairOutcome, ParticipantActor, ProjectSpec, World};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::enrollment::EnrollmentError;
use crate::identity::IdentityError;
use crate::ledger::{LedgerConfig, LedgerError};
use crate::mediator::MediatorError;
use crate::portal::PortalError;
use crate::wallet::WalletError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Wallet(#[from] WalletError),
    #[error(transparent)]
    Portal(#[from] PortalError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error(transparent)]
    Enrollment(#[from] EnrollmentError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSettings {
    pub batch_size: usize,
    pub batch_timeout_ms: u64,
}

impl Default for LedgerSettings {
    fn default() -> Self {
        let d = LedgerConfig::default();
        LedgerSettings { batch_size: d.batch_size, batch_timeout_ms: d.batch_timeout.as_millis() as u64 }
    }
}

/// Everything a run depends on besides wall time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_participants: usize,
    pub n_orgs: usize,
    pub n_projects: usize,
    pub k_threshold: usize,
    pub enrollment: bool,
    pub pseudonymous_transport: bool,
    pub preseed_dids: usize,
    pub seed: u64,
    /// Drive participants on parallel threads with the batching orderer.
    pub concurrent: bool,
    pub forget_revokes_first: bool,
    pub ledger: LedgerSettings,
    /// Directory for the ledger journal and portal store; in-memory when
    /// unset.
    pub storage_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_participants: 32,
            n_orgs: 4,
            n_projects: 12,
            k_threshold: crate::wallet::DEFAULT_K_THRESHOLD,
            enrollment: false,
            pseudonymous_transport: true,
            preseed_dids: 0,
            seed: 0,
            concurrent: false,
            forget_revokes_first: true,
            ledger: LedgerSettings::default(),
            storage_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn small(n_participants: usize, n_orgs: usize, n_projects: usize, seed: u64) -> Self {
        ScenarioConfig { n_participants, n_orgs, n_projects, k_threshold: n_projects.min(10), seed, ..Self::default() }
    }

    pub fn ledger_config(&self) -> LedgerConfig {
        let journal_path = self.storage_dir.as_ref().map(|d| d.join("ledger.journal"));
        if self.concurrent {
            LedgerConfig {
                batch_size: self.ledger.batch_size,
                batch_timeout: Duration::from_millis(self.ledger.batch_timeout_ms),
                journal_path,
            }
        } else {
            LedgerConfig { journal_path, ..LedgerConfig::immediate() }
        }
    }
}

/// Independent seed for one component of a run.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml_with_defaults() {
        let c = ScenarioConfig::from_toml("n_participants = 4\nseed = 7\n[ledger]\nbatch_size = 5\n").unwrap();
        assert_eq!(c.n_participants, 4);
        assert_eq!(c.n_projects, 12);
        assert_eq!(c.ledger.batch_size, 5);
        assert_eq!(c.ledger.batch_timeout_ms, 100);
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "a", 1));
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "b", 0));
        assert_eq!(sub_seed(1, "a", 0), sub_seed(1, "a", 0));
    }
}

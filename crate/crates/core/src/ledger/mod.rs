//! Permissioned consent ledger.
//!
//! A single deterministic orderer cuts batches of signed transactions into
//! hash-chained blocks. Transactions are simulated against committed state
//! first, which yields a read set of key versions; at commit time any read
//! whose version has moved fails the transaction with an MVCC conflict.
//! The consent contract lives in [`state`]; ordering and the journal in
//! [`orderer`] and [`journal`].

mod client;
pub mod journal;
mod orderer;
mod state;
mod types;

pub use client::LedgerClient;
pub use orderer::{verify_blocks, Ledger, LedgerConfig, PendingTx};
pub use state::{proof_key, terms_key, QueryResult, StateValue, Versioned, WorldState};
pub use types::*;

use crate::identity::Digest;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("identity `{0}` is not admitted to the consortium")]
    UnknownIdentity(String),
    #[error("identity `{0}` already admitted")]
    AlreadyAdmitted(String),
    #[error("transaction signature or id does not verify")]
    BadSignature,
    #[error("role {role:?} may not {operation}")]
    PermissionDenied { role: Role, operation: &'static str },
    #[error("consent terms `{0}` already published")]
    DuplicateTerms(String),
    #[error("invalid consent terms: {0}")]
    InvalidTerms(String),
    #[error("consent proof {0} already on the ledger")]
    DuplicateKey(Digest),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("consent proof {0} already revoked")]
    AlreadyRevoked(Digest),
    #[error("read-write conflict on `{key}`")]
    MvccConflict { key: String },
    #[error("transaction rejected at validation: {0}")]
    Rejected(String),
    #[error("transaction `{0}` already submitted")]
    DuplicateTx(String),
    #[error("transaction reference does not match the ledger")]
    TxMismatch,
    #[error("orderer has shut down")]
    Shutdown,
    #[error("journal: {0}")]
    Journal(String),
    #[error("chain verification failed at block {height}: {reason}")]
    Chain { height: u64, reason: String },
}

impl LedgerError {
    pub fn is_conflict(&self) -> bool {
        matches!(self, LedgerError::MvccConflict { .. })
    }

    /// Stable machine-readable tag, used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            LedgerError::UnknownIdentity(_) => "unknown_identity",
            LedgerError::AlreadyAdmitted(_) => "already_admitted",
            LedgerError::BadSignature => "bad_signature",
            LedgerError::PermissionDenied { .. } => "permission_denied",
            LedgerError::DuplicateTerms(_) => "duplicate_terms",
            LedgerError::InvalidTerms(_) => "invalid_terms",
            LedgerError::DuplicateKey(_) => "duplicate_key",
            LedgerError::NotFound(_) => "not_found",
            LedgerError::AlreadyRevoked(_) => "already_revoked",
            LedgerError::MvccConflict { .. } => "mvcc_conflict",
            LedgerError::Rejected(_) => "rejected",
            LedgerError::DuplicateTx(_) => "duplicate_tx",
            LedgerError::TxMismatch => "tx_mismatch",
            LedgerError::Shutdown => "shutdown",
            LedgerError::Journal(_) => "journal",
            LedgerError::Chain { .. } => "chain",
        }
    }
}

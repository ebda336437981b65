use serde::{Deserialize, Serialize};

use crate::canonical::{self, b64};
use crate::identity::{digest, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Organization,
    Portal,
    /// Read-only monitoring by supervisory bodies.
    Auditor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerIdentity {
    pub id: String,
    pub role: Role,
    #[serde(with = "b64")]
    pub verification_key: Vec<u8>,
}

/// Position of a transaction in the ledger; also the version stamp of every
/// key it wrote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogicalTime {
    pub block_height: u64,
    pub tx_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxRef {
    pub block_height: u64,
    pub tx_index: u32,
    pub tx_id: String,
}

impl TxRef {
    pub fn time(&self) -> LogicalTime {
        LogicalTime { block_height: self.block_height, tx_index: self.tx_index }
    }
}

impl std::fmt::Display for TxRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.block_height, self.tx_index, &self.tx_id[..12.min(self.tx_id.len())])
    }
}

/// Terms as submitted by an organization; the ledger stamps `published_at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermsSubmission {
    pub org_did: String,
    pub project_id: String,
    pub version: u32,
    pub terms_digest: Digest,
}

impl TermsSubmission {
    pub fn terms_id(&self) -> String {
        format!("{}/{}/v{}", self.org_did, self.project_id, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentTermsRecord {
    pub terms_id: String,
    pub org_did: String,
    pub project_id: String,
    pub version: u32,
    pub terms_digest: Digest,
    pub published_at: LogicalTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentState {
    Valid,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub key: Digest,
    pub publisher: String,
    pub state: ConsentState,
    pub published_at: LogicalTime,
    pub revoked_at: Option<LogicalTime>,
    pub superseded_by: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    PublishTerms { terms: TermsSubmission },
    PublishProof { proof: Digest },
    Revoke { key: Digest },
    /// Supersede-and-replace: revoke `old_key` and publish `new_proof` in
    /// one transaction.
    Update { old_key: Digest, new_proof: Digest },
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::PublishTerms { .. } => "publish_consent_terms",
            Operation::PublishProof { .. } => "publish_consent_proof",
            Operation::Revoke { .. } => "revoke_consent",
            Operation::Update { .. } => "update_consent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadEntry {
    pub key: String,
    pub version: Option<LogicalTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxPayload {
    pub submitter: String,
    pub nonce: u64,
    pub operation: Operation,
    pub read_set: Vec<ReadEntry>,
}

impl TxPayload {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn tx_id(&self) -> String {
        digest(&self.signing_bytes()).to_hex()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub payload: TxPayload,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Validation {
    Valid,
    MvccConflict { key: String },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTx {
    pub tx: Transaction,
    pub validation: Validation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub previous_digest: Digest,
    pub txs: Vec<BlockTx>,
    pub block_digest: Digest,
}

impl Block {
    pub fn compute_digest(height: u64, previous: &Digest, txs: &[BlockTx]) -> Digest {
        #[derive(Serialize)]
        struct Header<'a> {
            height: u64,
            previous_digest: &'a Digest,
            txs: &'a [BlockTx],
        }
        digest(&canonical::to_vec(&Header { height, previous_digest: previous, txs }))
    }
}
